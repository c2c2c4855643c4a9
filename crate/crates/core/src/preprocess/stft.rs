//! Short-time Fourier transform producing paired magnitude and phase
//! spectrograms.
//!
//! Fixed analysis parameters everywhere in the pipeline: 256-point FFT,
//! hop of 6 samples, Hamming window, one-sided spectrum (129 bins). A
//! 1200-sample chirp segment yields 158 analysis frames.

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::signals::hamming;

/// FFT length per analysis frame.
pub const N_FFT: usize = 256;

/// Hop between consecutive analysis frames, in samples.
pub const HOP_LEN: usize = 6;

/// One-sided bin count, `N_FFT / 2 + 1`.
pub const N_FREQ_BINS: usize = N_FFT / 2 + 1;

/// Analysis frames produced by a segment of `len` samples, or `None` when
/// the segment is shorter than one window.
pub fn frame_count(len: usize, n_fft: usize, hop: usize) -> Option<usize> {
    if len < n_fft {
        None
    } else {
        Some((len - n_fft) / hop + 1)
    }
}

/// Magnitude and phase spectrograms of one segment, both shaped
/// `(bins, frames)`. Phase is the principal value in `(-pi, pi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramPair {
    /// `|X[k, m]|`.
    pub magnitude: Array2<f64>,
    /// `arg X[k, m]` in `(-pi, pi]`.
    pub phase: Array2<f64>,
}

impl SpectrogramPair {
    /// `(bins, frames)`.
    pub fn shape(&self) -> (usize, usize) {
        let s = self.magnitude.dim();
        (s.0, s.1)
    }
}

/// STFT with the pipeline's fixed parameters (256-point FFT, hop 6,
/// Hamming window).
pub fn stft_pair(samples: &[f64]) -> Result<SpectrogramPair> {
    stft_pair_with(samples, N_FFT, HOP_LEN)
}

/// Argument of `c` in the half-open principal interval `(-pi, pi]`.
/// `atan2` returns the closed interval `[-pi, pi]`; the single redundant
/// value `-pi` (reached for negative-real coefficients with a negative
/// zero imaginary part) folds to `+pi`.
fn principal_phase(c: Complex64) -> f64 {
    let p = c.arg();
    if p == -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        p
    }
}

/// STFT with explicit FFT length and hop.
pub fn stft_pair_with(samples: &[f64], n_fft: usize, hop: usize) -> Result<SpectrogramPair> {
    if n_fft == 0 || hop == 0 {
        return Err(Error::InvalidParameter("n_fft and hop must be positive".into()));
    }
    let n_frames = frame_count(samples.len(), n_fft, hop).ok_or_else(|| {
        Error::InvalidParameter(format!(
            "segment of {} samples is shorter than one {n_fft}-sample window",
            samples.len()
        ))
    })?;
    let n_bins = n_fft / 2 + 1;
    let window = hamming(n_fft);
    let fft = FftPlanner::new().plan_fft_forward(n_fft);

    let mut magnitude = Array2::zeros((n_bins, n_frames));
    let mut phase = Array2::zeros((n_bins, n_frames));
    let mut buf = vec![Complex64::ZERO; n_fft];
    for m in 0..n_frames {
        let lo = m * hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(samples[lo + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        for k in 0..n_bins {
            magnitude[(k, m)] = buf[k].norm();
            phase[(k, m)] = principal_phase(buf[k]);
        }
    }
    Ok(SpectrogramPair { magnitude, phase })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::dft_magnitudes;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tone(freq: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / 48_000.0).sin())
            .collect()
    }

    #[test]
    fn chirp_segment_yields_the_fixed_grid() {
        let pair = stft_pair(&vec![0.25; 1200]).unwrap();
        assert_eq!(pair.shape(), (129, 158));
    }

    #[test]
    fn frame_count_follows_the_floor_formula() {
        assert_eq!(frame_count(256, 256, 6), Some(1));
        assert_eq!(frame_count(261, 256, 6), Some(1));
        assert_eq!(frame_count(262, 256, 6), Some(2));
        assert_eq!(frame_count(1200, 256, 6), Some(158));
        assert_eq!(frame_count(255, 256, 6), None);
    }

    #[test]
    fn pure_tone_peaks_in_its_bin() {
        // 18 kHz at 48 kHz with a 256-point FFT lands exactly on bin 96.
        let pair = stft_pair(&tone(18_000.0, 1200)).unwrap();
        for m in 0..158 {
            let col = pair.magnitude.column(m);
            let peak = col
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(peak, 96, "frame {m}");
        }
    }

    #[test]
    fn magnitudes_match_a_naive_windowed_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let samples: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pair = stft_pair(&samples).unwrap();

        // Check frames 0 and 7 against the O(n^2) oracle.
        let window = crate::signals::hamming(N_FFT);
        for &m in &[0usize, 7] {
            let lo = m * HOP_LEN;
            let windowed: Vec<f64> = (0..N_FFT).map(|i| samples[lo + i] * window[i]).collect();
            let oracle = dft_magnitudes(&windowed);
            for k in 0..N_FREQ_BINS {
                assert_abs_diff_eq!(pair.magnitude[(k, m)], oracle[k], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn phase_stays_in_the_principal_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let samples: Vec<f64> = (0..1200).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pair = stft_pair(&samples).unwrap();
        for &p in pair.phase.iter() {
            assert!(p > -std::f64::consts::PI && p <= std::f64::consts::PI, "phase {p}");
        }
    }

    #[test]
    fn negative_real_coefficients_map_to_plus_pi() {
        // atan2 distinguishes the sign of a zero imaginary part: a
        // negative-real coefficient can come out as -pi or +pi. The
        // principal-value fold must land both on +pi.
        use num_complex::Complex64;
        let pi = std::f64::consts::PI;
        assert_eq!(principal_phase(Complex64::new(-1.0, 0.0)), pi);
        assert_eq!(principal_phase(Complex64::new(-1.0, -0.0)), pi);
        assert_eq!(principal_phase(Complex64::new(1.0, 0.0)), 0.0);
        assert_eq!(principal_phase(Complex64::new(0.0, 0.0)), 0.0);
        assert_eq!(principal_phase(Complex64::new(0.0, -1.0)), -pi / 2.0);
    }

    #[test]
    fn too_short_segments_are_rejected() {
        assert!(stft_pair(&vec![0.0; 200]).is_err());
    }
}
