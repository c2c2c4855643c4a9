//! Fixed-size feature tensors from difference spectrograms.
//!
//! The sensing band lives above 17 kHz, so everything below a 12 kHz
//! threshold is discarded: with a 256-point FFT at 48 kHz that threshold
//! is bin 64, leaving bins 64..=128 (65 rows). The surviving magnitude and
//! phase grids are stacked as two channels and min-max normalized into
//! [0, 1], giving the `65 x 158 x 2` tensor the CNN consumes.

use ndarray::{Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::DiffSpectrogram;

/// Frequencies below this are cropped away, Hz.
pub const CROP_FREQ_HZ: f64 = 12_000.0;

/// First kept bin for the default crop (12 kHz, 256-point FFT, 48 kHz).
pub const CROP_BIN: usize = 64;

/// Rows in the default tensor: bins 64..=128.
pub const TENSOR_BINS: usize = 65;

/// Columns in the default tensor (STFT frames of a chirp segment).
pub const TENSOR_FRAMES: usize = 158;

/// Channels: magnitude difference and phase difference.
pub const TENSOR_CHANNELS: usize = 2;

/// Crop parameters. `Default` reproduces the deployed pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CropSpec {
    /// Crop threshold, Hz.
    pub threshold_hz: f64,
    /// FFT length the spectrogram was computed with.
    pub n_fft: usize,
    /// Sample rate, Hz.
    pub sample_rate: u32,
}

impl Default for CropSpec {
    fn default() -> Self {
        Self {
            threshold_hz: CROP_FREQ_HZ,
            n_fft: crate::preprocess::N_FFT,
            sample_rate: crate::signals::SAMPLE_RATE,
        }
    }
}

impl CropSpec {
    /// Index of the first kept bin: `floor(threshold * n_fft / fs)`.
    pub fn first_bin(&self) -> usize {
        (self.threshold_hz * self.n_fft as f64 / f64::from(self.sample_rate)).floor() as usize
    }
}

/// How min-max normalization treats the two channels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// One min/max over the whole tensor. Default: the two channels keep
    /// their relative scale.
    #[default]
    Joint,
    /// Min/max per channel; each channel independently spans [0, 1].
    PerChannel,
}

/// A normalized `(bins, frames, 2)` tensor ready for the CNN.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    /// Values in [0, 1]; channel 0 is magnitude, channel 1 is phase.
    pub data: Array3<f64>,
}

impl FeatureTensor {
    /// `(bins, frames, channels)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        self.data.dim()
    }
}

/// Crops the low-frequency rows and stacks magnitude and phase into a
/// `(bins, frames, 2)` array (not yet normalized).
pub fn crop_and_stack(diff: &DiffSpectrogram, crop: &CropSpec) -> Result<Array3<f64>> {
    let (bins, frames) = diff.shape();
    let first = crop.first_bin();
    if first >= bins {
        return Err(Error::InvalidParameter(format!(
            "crop threshold keeps no bins: first kept bin {first} >= {bins}"
        )));
    }
    let kept = bins - first;
    let mut out = Array3::zeros((kept, frames, TENSOR_CHANNELS));
    for k in 0..kept {
        for m in 0..frames {
            out[(k, m, 0)] = diff.magnitude[(first + k, m)];
            out[(k, m, 1)] = diff.phase[(first + k, m)];
        }
    }
    Ok(out)
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

fn scale_in_place(mut view: ndarray::ArrayViewMut3<'_, f64>) {
    let (lo, hi) = min_max(view.iter().copied());
    let range = hi - lo;
    if range > 0.0 {
        view.mapv_inplace(|v| (v - lo) / range);
    } else {
        // A constant tensor carries no contrast; map it to all zeros
        // rather than dividing by zero.
        view.fill(0.0);
    }
}

/// Min-max normalizes a stacked tensor into [0, 1].
pub fn normalize(stacked: &Array3<f64>, mode: NormMode) -> FeatureTensor {
    let mut data = stacked.clone();
    match mode {
        NormMode::Joint => scale_in_place(data.view_mut()),
        NormMode::PerChannel => {
            for c in 0..data.len_of(Axis(2)) {
                // Normalize each channel slice independently; the slice is
                // reshaped to 3-d so the same scaler applies.
                let (lo, hi) = min_max(data.index_axis(Axis(2), c).iter().copied());
                let range = hi - lo;
                let mut slice = data.index_axis_mut(Axis(2), c);
                if range > 0.0 {
                    slice.mapv_inplace(|v| (v - lo) / range);
                } else {
                    slice.fill(0.0);
                }
            }
        }
    }
    FeatureTensor { data }
}

/// Crop, stack, and normalize in one step.
pub fn tensor_from_diff(
    diff: &DiffSpectrogram,
    crop: &CropSpec,
    mode: NormMode,
) -> Result<FeatureTensor> {
    Ok(normalize(&crop_and_stack(diff, crop)?, mode))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn diff_from_fn(
        bins: usize,
        frames: usize,
        f: impl Fn(usize, usize) -> (f64, f64),
    ) -> DiffSpectrogram {
        let mut magnitude = Array2::zeros((bins, frames));
        let mut phase = Array2::zeros((bins, frames));
        for k in 0..bins {
            for m in 0..frames {
                let (a, b) = f(k, m);
                magnitude[(k, m)] = a;
                phase[(k, m)] = b;
            }
        }
        DiffSpectrogram { magnitude, phase }
    }

    #[test]
    fn default_crop_keeps_bins_64_to_128() {
        assert_eq!(CropSpec::default().first_bin(), CROP_BIN);
        let diff = diff_from_fn(129, 158, |k, m| ((k * 1000 + m) as f64, -(k as f64)));
        let stacked = crop_and_stack(&diff, &CropSpec::default()).unwrap();
        assert_eq!(stacked.dim(), (TENSOR_BINS, TENSOR_FRAMES, TENSOR_CHANNELS));
        // Row 0 of the tensor is bin 64 of the spectrogram.
        assert_eq!(stacked[(0, 0, 0)], 64_000.0);
        assert_eq!(stacked[(0, 0, 1)], -64.0);
        assert_eq!(stacked[(64, 157, 0)], 128_157.0);
    }

    #[test]
    fn joint_normalization_attains_zero_and_one() {
        let diff = diff_from_fn(129, 10, |k, m| ((k + m) as f64, 0.5 * (k as f64)));
        let t = tensor_from_diff(&diff, &CropSpec::default(), NormMode::Joint).unwrap();
        let (lo, hi) = t
            .data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        assert_eq!(lo, 0.0);
        assert_eq!(hi, 1.0);
    }

    #[test]
    fn joint_mode_preserves_relative_channel_scale() {
        // Magnitude spans 0..10, phase 0..1. Jointly normalized, phase must
        // top out at 0.1, not 1.
        let diff = diff_from_fn(129, 4, |k, _| (10.0 * (k as f64) / 128.0, (k as f64) / 128.0));
        let t = tensor_from_diff(&diff, &CropSpec::default(), NormMode::Joint).unwrap();
        let phase_max = t
            .data
            .index_axis(Axis(2), 1)
            .iter()
            .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        assert!(phase_max < 0.11, "phase max {phase_max}");
    }

    #[test]
    fn per_channel_mode_spans_both_channels() {
        let diff = diff_from_fn(129, 4, |k, _| (10.0 * (k as f64) / 128.0, (k as f64) / 128.0));
        let t = tensor_from_diff(&diff, &CropSpec::default(), NormMode::PerChannel).unwrap();
        for c in 0..2 {
            let hi = t
                .data
                .index_axis(Axis(2), c)
                .iter()
                .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            assert_eq!(hi, 1.0, "channel {c}");
        }
    }

    #[test]
    fn constant_input_maps_to_zeros() {
        let diff = diff_from_fn(129, 7, |_, _| (3.25, 3.25));
        for mode in [NormMode::Joint, NormMode::PerChannel] {
            let t = tensor_from_diff(&diff, &CropSpec::default(), mode).unwrap();
            assert!(t.data.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn normalization_is_invariant_to_positive_affine_maps() {
        let diff = diff_from_fn(129, 6, |k, m| ((k * m % 13) as f64, (k + 2 * m) as f64 % 7.0));
        let base = tensor_from_diff(&diff, &CropSpec::default(), NormMode::Joint).unwrap();

        let scaled = DiffSpectrogram {
            magnitude: diff.magnitude.mapv(|v| 4.0 * v + 11.0),
            phase: diff.phase.mapv(|v| 4.0 * v + 11.0),
        };
        let t = tensor_from_diff(&scaled, &CropSpec::default(), NormMode::Joint).unwrap();
        for (a, b) in base.data.iter().zip(t.data.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn crop_threshold_beyond_the_grid_is_rejected() {
        let diff = diff_from_fn(129, 4, |_, _| (0.0, 0.0));
        let crop = CropSpec {
            threshold_hz: 24_200.0,
            ..CropSpec::default()
        };
        assert!(crop_and_stack(&diff, &crop).is_err());
    }
}
