//! On-disk artifact formats.
//!
//! Waveforms, tensors, and feature vectors are stored as raw little-endian
//! `f32` with a JSON sidecar next to the data file (same stem, `.json`
//! extension) describing shape and provenance. In memory everything is
//! `f64`; narrowing happens only here, so reading a file back and writing
//! it again reproduces the bytes exactly.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{ArrayD, ArrayViewD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::SensingWaveform;

/// What a stored waveform is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveRole {
    /// Transmit sequence (pilot + frames) as played by the speaker.
    Tx,
    /// Received recording from the microphone.
    Rx,
    /// Pilot preamble by itself.
    Pilot,
}

/// Provenance of a simulated trial, carried in waveform sidecars so that
/// downstream stages can recover labels without a separate manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMeta {
    /// Subject identifier, e.g. `"s03"`.
    pub subject: String,
    /// Trial kind: `"genuine"`, `"zero_effort"`, or `"mimicry"`.
    pub kind: String,
    /// First frame index in which the ear path is active.
    pub ear_present_from_frame: usize,
    /// RNG seed the trial was rendered with.
    pub seed: u64,
}

/// Sidecar for a waveform file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformSidecar {
    /// Sample rate in Hz.
    pub sample_rate: u32,
    /// Number of `f32` samples in the data file.
    pub n_samples: usize,
    /// Role of the waveform.
    pub role: WaveRole,
    /// Trial provenance, present on simulated recordings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trial: Option<TrialMeta>,
    /// Frame index, present on extracted frame segments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_index: Option<usize>,
    /// Fine-sync matched-filter offset, present on extracted segments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sync_offset: Option<usize>,
}

/// Sidecar for a tensor or feature-vector file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSidecar {
    /// Shape of the stored array; the data file holds the C-order (row
    /// major) flattening.
    pub shape: Vec<usize>,
    /// What the tensor holds, e.g. `"diff_spectrogram"` or `"feature"`.
    pub kind: String,
    /// Subject label, when the tensor belongs to a labelled dataset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    /// Trial kind label, mirrored from the source recording.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trial_kind: Option<String>,
}

/// Path of the JSON sidecar belonging to `data_path`.
pub fn sidecar_path(data_path: &Path) -> PathBuf {
    data_path.with_extension("json")
}

fn check_finite(values: impl IntoIterator<Item = f64>, what: &str) -> Result<()> {
    for (i, v) in values.into_iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "{what} contains non-finite value {v} at index {i}"
            )));
        }
    }
    Ok(())
}

fn write_f32_le(path: &Path, values: impl Iterator<Item = f64>) -> Result<()> {
    let mut bytes = Vec::new();
    for v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn read_f32_le(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Format(format!(
            "{} has {} bytes, not a multiple of 4",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect())
}

// --- Waveforms -------------------------------------------------------------

/// Writes a waveform and its sidecar. Samples must be finite; they are
/// narrowed to `f32`.
pub fn write_waveform(
    path: &Path,
    wave: &SensingWaveform,
    role: WaveRole,
    trial: Option<TrialMeta>,
) -> Result<()> {
    check_finite(wave.samples.iter().copied(), "waveform")?;
    write_f32_le(path, wave.samples.iter().copied())?;
    let sidecar = WaveformSidecar {
        sample_rate: wave.sample_rate,
        n_samples: wave.samples.len(),
        role,
        trial,
        frame_index: None,
        sync_offset: None,
    };
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(())
}

/// Writes one synced frame segment in the waveform format, tagged with its
/// frame index and fine-sync offset.
pub fn write_frame_segment(
    path: &Path,
    samples: &[f64],
    sample_rate: u32,
    frame_index: usize,
    sync_offset: usize,
) -> Result<()> {
    check_finite(samples.iter().copied(), "segment")?;
    write_f32_le(path, samples.iter().copied())?;
    let sidecar = WaveformSidecar {
        sample_rate,
        n_samples: samples.len(),
        role: WaveRole::Rx,
        trial: None,
        frame_index: Some(frame_index),
        sync_offset: Some(sync_offset),
    };
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(())
}

/// Reads a waveform and its sidecar, checking that the data length matches
/// the sidecar's sample count.
pub fn read_waveform(path: &Path) -> Result<(SensingWaveform, WaveformSidecar)> {
    let sidecar: WaveformSidecar =
        serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
    let samples = read_f32_le(path)?;
    if samples.len() != sidecar.n_samples {
        return Err(Error::Format(format!(
            "{}: sidecar says {} samples, file holds {}",
            path.display(),
            sidecar.n_samples,
            samples.len()
        )));
    }
    Ok((SensingWaveform::new(samples, sidecar.sample_rate), sidecar))
}

// --- Tensors ---------------------------------------------------------------

/// Writes an n-d tensor (C-order `f32`) and its sidecar.
pub fn write_tensor(
    path: &Path,
    tensor: ArrayViewD<'_, f64>,
    kind: &str,
    subject: Option<&str>,
    trial_kind: Option<&str>,
) -> Result<()> {
    check_finite(tensor.iter().copied(), "tensor")?;
    // `iter()` walks in logical row-major order regardless of layout.
    write_f32_le(path, tensor.iter().copied())?;
    let sidecar = TensorSidecar {
        shape: tensor.shape().to_vec(),
        kind: kind.to_string(),
        subject: subject.map(str::to_string),
        trial_kind: trial_kind.map(str::to_string),
    };
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(())
}

/// Reads a tensor and its sidecar, checking element count against shape.
pub fn read_tensor(path: &Path) -> Result<(ArrayD<f64>, TensorSidecar)> {
    let sidecar: TensorSidecar = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
    let values = read_f32_le(path)?;
    let expected: usize = sidecar.shape.iter().product();
    if values.len() != expected {
        return Err(Error::Format(format!(
            "{}: shape {:?} needs {} values, file holds {}",
            path.display(),
            sidecar.shape,
            expected,
            values.len()
        )));
    }
    let tensor = ArrayD::from_shape_vec(IxDyn(&sidecar.shape), values)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok((tensor, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    use crate::signals::{generate_chirp, ChirpSpec};

    #[test]
    fn waveform_roundtrip_preserves_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let wave = generate_chirp(&ChirpSpec::sensing_default()).unwrap();
        let a = dir.path().join("a.f32");
        let b = dir.path().join("b.f32");
        write_waveform(&a, &wave, WaveRole::Tx, None).unwrap();

        // f32 -> f64 widening is exact, so read-then-write reproduces the
        // file byte for byte even though generation ran in f64.
        let (back, sidecar) = read_waveform(&a).unwrap();
        assert_eq!(sidecar.n_samples, wave.len());
        assert_eq!(sidecar.role, WaveRole::Tx);
        write_waveform(&b, &back, WaveRole::Tx, None).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn trial_metadata_survives_the_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let wave = SensingWaveform::new(vec![0.0, 0.5, -0.5], 48_000);
        let path = dir.path().join("trial.f32");
        let meta = TrialMeta {
            subject: "s07".into(),
            kind: "genuine".into(),
            ear_present_from_frame: 1,
            seed: 42,
        };
        write_waveform(&path, &wave, WaveRole::Rx, Some(meta.clone())).unwrap();
        let (_, sidecar) = read_waveform(&path).unwrap();
        assert_eq!(sidecar.trial, Some(meta));
    }

    #[test]
    fn frame_segments_carry_their_sync_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frame_03.f32");
        write_frame_segment(&path, &[0.25, -0.5, 0.125], 48_000, 3, 17).unwrap();
        let (wave, sidecar) = read_waveform(&path).unwrap();
        assert_eq!(wave.samples, vec![0.25, -0.5, 0.125]);
        assert_eq!(sidecar.frame_index, Some(3));
        assert_eq!(sidecar.sync_offset, Some(17));
        assert_eq!(sidecar.role, WaveRole::Rx);
    }

    #[test]
    fn tensor_roundtrip_preserves_shape_and_values() {
        let dir = tempfile::tempdir().unwrap();
        let tensor = Array3::from_shape_fn((5, 7, 2), |(i, j, k)| {
            (i as f64 - 2.0) * 0.25 + j as f64 * 0.125 + k as f64
        });
        let path = dir.path().join("t.f32");
        write_tensor(&path, tensor.view().into_dyn(), "diff_spectrogram", Some("s01"), None)
            .unwrap();
        let (back, sidecar) = read_tensor(&path).unwrap();
        assert_eq!(sidecar.shape, vec![5, 7, 2]);
        assert_eq!(sidecar.subject.as_deref(), Some("s01"));
        // The chosen values are exactly representable in f32, so the trip
        // is lossless.
        assert_eq!(back.into_dimensionality::<ndarray::Ix3>().unwrap(), tensor);
    }

    #[test]
    fn length_mismatch_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let wave = SensingWaveform::new(vec![0.1, 0.2, 0.3, 0.4], 48_000);
        let path = dir.path().join("w.f32");
        write_waveform(&path, &wave, WaveRole::Rx, None).unwrap();
        // Truncate the data file behind the sidecar's back.
        std::fs::write(&path, [0u8; 8]).unwrap();
        assert!(matches!(read_waveform(&path), Err(Error::Format(_))));
    }

    #[test]
    fn non_finite_samples_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let wave = SensingWaveform::new(vec![0.0, f64::NAN], 48_000);
        let err = write_waveform(&dir.path().join("n.f32"), &wave, WaveRole::Rx, None);
        assert!(matches!(err, Err(Error::InvalidParameter(_))));
    }
}
