//! Receive-side denoising: synchronization, segmentation, bandpass
//! filtering, and reference spectrum subtraction.
//!
//! [`preprocess_recording`] runs the whole chain on one recording:
//!
//! 1. [`coarse_sync`] finds the pilot; frames start right after it.
//! 2. [`segment_frames`] cuts fixed-length frames.
//! 3. [`fine_sync`] aligns each frame's echo to the chirp template.
//! 4. The aligned segments pass through the Butterworth bandpass.
//! 5. [`stft_pair`] turns each segment into magnitude/phase spectrograms.
//! 6. [`subtract_reference`] removes the first (ear-free) frame's spectra
//!    from every later frame's.
//!
//! A recording with `n` frames therefore yields `n - 1` difference
//! spectrograms.

mod filter;
mod mpss;
mod stft;
mod sync;

pub use filter::{butterworth_bandpass, sensing_bandpass, Biquad, SosFilter};
pub use mpss::{subtract_reference, DiffSpectrogram, PhaseDiffMode};
pub use stft::{
    frame_count, stft_pair, stft_pair_with, SpectrogramPair, HOP_LEN, N_FFT, N_FREQ_BINS,
};
pub use sync::{
    argmax_first, coarse_sync, fine_sync, matched_filter, segment_frames, SyncedSegment,
    PILOT_THRESHOLD,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::{generate_chirp, generate_pilot, FrameLayout, SensingWaveform};

/// Knobs for the receive chain. `Default` matches the deployed pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Normalized-correlation threshold for pilot detection.
    pub pilot_threshold: f64,
    /// Bandpass lower -3 dB edge, Hz.
    pub bandpass_low_hz: f64,
    /// Bandpass upper -3 dB edge, Hz.
    pub bandpass_high_hz: f64,
    /// Analog prototype order of the bandpass.
    pub bandpass_order: usize,
    /// Phase differencing mode for the reference subtraction.
    pub phase_mode: PhaseDiffMode,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            pilot_threshold: PILOT_THRESHOLD,
            bandpass_low_hz: 17_000.0,
            bandpass_high_hz: 23_000.0,
            bandpass_order: 5,
            phase_mode: PhaseDiffMode::Literal,
        }
    }
}

/// Everything the receive chain produced for one recording, kept around
/// for inspection; most callers only need `diffs`.
#[derive(Debug, Clone)]
pub struct PreprocessedRecording {
    /// Difference spectrograms for frames `1..n` against frame 0.
    pub diffs: Vec<DiffSpectrogram>,
    /// Where the frames started in the recording (sample index).
    pub frames_start: usize,
    /// Matched-filter offset of each frame's segment, including frame 0.
    pub offsets: Vec<usize>,
    /// Band-passed, fine-synced chirp segments in frame order (frame 0 is
    /// the reference).
    pub segments: Vec<Vec<f64>>,
}

/// Runs the full receive chain on one recording.
///
/// The layout describes the transmitted sequence; a recording must contain
/// the pilot followed by at least `layout.n_frames` frames (at least 2, so
/// there is a reference and one sensing frame).
pub fn preprocess_recording(
    recording: &SensingWaveform,
    layout: &FrameLayout,
    cfg: &PreprocessConfig,
) -> Result<PreprocessedRecording> {
    layout.validate()?;
    if layout.n_frames < 2 {
        return Err(Error::InvalidParameter(
            "need at least 2 frames: one reference and one sensing frame".into(),
        ));
    }
    let pilot = generate_pilot(&layout.pilot)?;
    let template = generate_chirp(&layout.chirp)?;
    let bandpass = butterworth_bandpass(
        cfg.bandpass_order,
        cfg.bandpass_low_hz,
        cfg.bandpass_high_hz,
        f64::from(recording.sample_rate),
    )?;

    let frames_start = coarse_sync(recording, &pilot, cfg.pilot_threshold)?;
    let frames = segment_frames(recording, frames_start, layout.n_frames, layout.frame_len())?;

    let mut offsets = Vec::with_capacity(frames.len());
    let mut segments = Vec::with_capacity(frames.len());
    let mut spectra = Vec::with_capacity(frames.len());
    for (idx, frame) in frames.iter().enumerate() {
        let seg = fine_sync(frame, &template.samples, idx)?;
        offsets.push(seg.offset);
        let filtered = bandpass.apply(&seg.samples);
        spectra.push(stft_pair(&filtered)?);
        segments.push(filtered);
    }

    let reference = &spectra[0];
    let diffs = spectra[1..]
        .iter()
        .map(|s| subtract_reference(s, reference, cfg.phase_mode))
        .collect::<Result<Vec<_>>>()?;
    Ok(PreprocessedRecording {
        diffs,
        frames_start,
        offsets,
        segments,
    })
}
