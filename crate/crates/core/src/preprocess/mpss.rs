//! Reference spectrum subtraction.
//!
//! Static parts of the channel (speaker/mic coupling, room reflections,
//! device body) appear identically in every frame of a recording. The
//! first frame is captured before the ear is in place, so subtracting its
//! spectrograms from each sensing frame's leaves mostly the ear's
//! contribution. Magnitude and phase channels are differenced separately
//! and elementwise.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::stft::SpectrogramPair;

/// How phase spectrograms are differenced.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseDiffMode {
    /// `|phi_s - phi_r|` on principal values, range `[0, 2 pi)`. This is
    /// the default: the difference is taken literally on the stored phase
    /// images, matching how the spectrogram tensors are defined.
    #[default]
    Literal,
    /// Wrapped angular distance `min(d, 2 pi - d)`, range `[0, pi]`.
    /// Available behind a flag for experiments; changes feature scaling.
    Angular,
}

/// Differences of magnitude and phase spectrograms, both `(bins, frames)`,
/// both non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffSpectrogram {
    /// `| |X_s| - |X_r| |`.
    pub magnitude: Array2<f64>,
    /// Phase difference per [`PhaseDiffMode`].
    pub phase: Array2<f64>,
}

impl DiffSpectrogram {
    /// `(bins, frames)`.
    pub fn shape(&self) -> (usize, usize) {
        let s = self.magnitude.dim();
        (s.0, s.1)
    }
}

/// Subtracts the reference spectrograms from the sensing spectrograms,
/// elementwise and channel by channel.
pub fn subtract_reference(
    sensing: &SpectrogramPair,
    reference: &SpectrogramPair,
    mode: PhaseDiffMode,
) -> Result<DiffSpectrogram> {
    if sensing.shape() != reference.shape() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", reference.shape()),
            actual: format!("{:?}", sensing.shape()),
        });
    }
    let magnitude = (&sensing.magnitude - &reference.magnitude).mapv(f64::abs);
    let phase = match mode {
        PhaseDiffMode::Literal => (&sensing.phase - &reference.phase).mapv(f64::abs),
        PhaseDiffMode::Angular => {
            let two_pi = 2.0 * std::f64::consts::PI;
            (&sensing.phase - &reference.phase).mapv(|d| {
                let d = d.abs();
                d.min(two_pi - d)
            })
        }
    };
    Ok(DiffSpectrogram { magnitude, phase })
}
