//! Transmit-side sensing waveforms.
//!
//! The probe that gets played into the ear is built from three pieces:
//!
//! - a linear up-chirp (17 -> 23 kHz, 25 ms) with a short Hamming taper at
//!   both ends to avoid audible clicks,
//! - an equally long stretch of silence so each echo dies out before the
//!   next chirp starts,
//! - a pilot preamble of three identical short down-chirps (22 -> 18 kHz)
//!   that the receiver correlates against to find where the sequence begins.
//!
//! One chirp + one silence is a *frame* (50 ms at 48 kHz); a sensing
//! sequence is the pilot followed by a configurable number of frames.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sample rate used by every waveform in the pipeline, in Hz.
pub const SAMPLE_RATE: u32 = 48_000;

/// Samples in one sensing chirp (25 ms at 48 kHz).
pub const CHIRP_LEN: usize = 1200;

/// Samples of silence after each chirp.
pub const SILENCE_LEN: usize = 1200;

/// Samples in one frame: chirp followed by silence (50 ms at 48 kHz).
pub const FRAME_LEN: usize = CHIRP_LEN + SILENCE_LEN;

/// Samples in one pilot chirp.
pub const PILOT_CHIRP_LEN: usize = 500;

/// Number of repeated chirps in the pilot preamble.
pub const PILOT_REPEATS: usize = 3;

/// Total pilot length in samples.
pub const PILOT_LEN: usize = PILOT_REPEATS * PILOT_CHIRP_LEN;

/// Taper length applied to each end of a sensing chirp, in samples.
pub const CHIRP_TAPER_LEN: usize = 120;

/// Default peak amplitude for generated waveforms, kept below full scale so
/// the simulated channel has headroom before clipping.
pub const DEFAULT_AMPLITUDE: f64 = 0.9;

// --- Specs ---------------------------------------------------------------

/// Parameters of a linear chirp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChirpSpec {
    /// Instantaneous frequency at the first sample, Hz.
    pub f_start: f64,
    /// Instantaneous frequency at the end of the sweep, Hz. May be below
    /// `f_start` for a down-chirp.
    pub f_end: f64,
    /// Chirp length in samples.
    pub len: usize,
    /// Sample rate, Hz.
    pub sample_rate: u32,
    /// Hamming taper length applied to each end, in samples. Zero disables
    /// the taper.
    pub taper_len: usize,
    /// Peak amplitude in (0, 1].
    pub amplitude: f64,
}

impl ChirpSpec {
    /// The sensing chirp used throughout the pipeline: 17 -> 23 kHz over
    /// 1200 samples with a 120-sample taper at each end.
    pub fn sensing_default() -> Self {
        Self {
            f_start: 17_000.0,
            f_end: 23_000.0,
            len: CHIRP_LEN,
            sample_rate: SAMPLE_RATE,
            taper_len: CHIRP_TAPER_LEN,
            amplitude: DEFAULT_AMPLITUDE,
        }
    }

    /// Checks that the sweep stays inside (0, Nyquist) and the taper fits.
    pub fn validate(&self) -> Result<()> {
        let nyquist = f64::from(self.sample_rate) / 2.0;
        if self.sample_rate == 0 {
            return Err(Error::InvalidParameter("sample_rate must be positive".into()));
        }
        if self.len == 0 {
            return Err(Error::InvalidParameter("chirp length must be positive".into()));
        }
        for (name, f) in [("f_start", self.f_start), ("f_end", self.f_end)] {
            if !f.is_finite() || f <= 0.0 || f >= nyquist {
                return Err(Error::InvalidParameter(format!(
                    "{name} = {f} Hz is outside (0, {nyquist}) Hz"
                )));
            }
        }
        if 2 * self.taper_len > self.len {
            return Err(Error::InvalidParameter(format!(
                "taper of 2 x {} samples does not fit in a {}-sample chirp",
                self.taper_len, self.len
            )));
        }
        if !(self.amplitude > 0.0 && self.amplitude <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "amplitude {} is outside (0, 1]",
                self.amplitude
            )));
        }
        Ok(())
    }
}

/// Parameters of the pilot preamble: `repeats` identical untapered chirps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PilotSpec {
    /// Number of repeated chirps.
    pub repeats: usize,
    /// Length of each chirp in samples.
    pub chirp_len: usize,
    /// Sweep start frequency, Hz (above the end frequency: the pilot sweeps
    /// downwards so it cannot be mistaken for a sensing chirp).
    pub f_start: f64,
    /// Sweep end frequency, Hz.
    pub f_end: f64,
    /// Sample rate, Hz.
    pub sample_rate: u32,
    /// Peak amplitude in (0, 1].
    pub amplitude: f64,
}

impl Default for PilotSpec {
    fn default() -> Self {
        Self {
            repeats: PILOT_REPEATS,
            chirp_len: PILOT_CHIRP_LEN,
            f_start: 22_000.0,
            f_end: 18_000.0,
            sample_rate: SAMPLE_RATE,
            amplitude: DEFAULT_AMPLITUDE,
        }
    }
}

impl PilotSpec {
    fn chirp_spec(&self) -> ChirpSpec {
        ChirpSpec {
            f_start: self.f_start,
            f_end: self.f_end,
            len: self.chirp_len,
            sample_rate: self.sample_rate,
            taper_len: 0,
            amplitude: self.amplitude,
        }
    }

    /// Checks repeat count and the underlying chirp parameters.
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::InvalidParameter("pilot needs at least one chirp".into()));
        }
        self.chirp_spec().validate()
    }
}

/// Layout of a full sensing sequence: pilot, then `n_frames` frames of
/// chirp + silence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameLayout {
    /// The sensing chirp played in every frame.
    pub chirp: ChirpSpec,
    /// Silence after each chirp, in samples.
    pub silence_len: usize,
    /// Number of frames after the pilot. At least 2 are needed downstream:
    /// the first echo serves as the reference for spectral subtraction.
    pub n_frames: usize,
    /// Pilot preamble placed in front of the frames.
    pub pilot: PilotSpec,
}

impl FrameLayout {
    /// Default layout with the given number of frames.
    pub fn with_frames(n_frames: usize) -> Self {
        Self {
            chirp: ChirpSpec::sensing_default(),
            silence_len: SILENCE_LEN,
            n_frames,
            pilot: PilotSpec::default(),
        }
    }

    /// Samples in one frame.
    pub fn frame_len(&self) -> usize {
        self.chirp.len + self.silence_len
    }

    /// Total samples in the assembled sequence.
    pub fn total_len(&self) -> usize {
        self.pilot.repeats * self.pilot.chirp_len + self.n_frames * self.frame_len()
    }

    /// Checks the sub-specs agree and at least one frame is requested.
    pub fn validate(&self) -> Result<()> {
        self.chirp.validate()?;
        self.pilot.validate()?;
        if self.n_frames == 0 {
            return Err(Error::InvalidParameter("layout needs at least one frame".into()));
        }
        if self.pilot.sample_rate != self.chirp.sample_rate {
            return Err(Error::InvalidParameter(format!(
                "pilot sample rate {} != chirp sample rate {}",
                self.pilot.sample_rate, self.chirp.sample_rate
            )));
        }
        Ok(())
    }
}

// --- Waveform ------------------------------------------------------------

/// A mono waveform with its sample rate. Samples are `f64` in memory; they
/// are only narrowed to `f32` at file boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingWaveform {
    /// Samples, nominally within [-1, 1].
    pub samples: Vec<f64>,
    /// Sample rate, Hz.
    pub sample_rate: u32,
}

impl SensingWaveform {
    /// Wraps samples with a rate. No range check: received audio may carry
    /// noise; generators and the channel enforce their own bounds.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self { samples, sample_rate }
    }

    /// Number of samples.
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// True when there are no samples.
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Duration in seconds.
    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Largest absolute sample value (0 for an empty waveform).
    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |m, &s| m.max(s.abs()))
    }
}

/// Hamming window of length `n`: `0.54 - 0.46 cos(2 pi i / (n - 1))`.
/// `n == 1` yields the single value `0.08`.
pub fn hamming(n: usize) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![0.08];
    }
    let denom = (n - 1) as f64;
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / denom).cos())
        .collect()
}

// --- Generators ----------------------------------------------------------

/// Generates a linear chirp from its spec.
///
/// The instantaneous phase is the integral of the linear frequency ramp,
/// `phi(t) = 2 pi (f_start t + (f_end - f_start) / (2 T) t^2)` with
/// `T = len / sample_rate`, so sample `i` is `A sin(phi(i / fs))`. When
/// `taper_len > 0` the two halves of a Hamming window of length
/// `2 * taper_len` fade the ends in and out; the middle is untouched.
pub fn generate_chirp(spec: &ChirpSpec) -> Result<SensingWaveform> {
    spec.validate()?;
    let fs = f64::from(spec.sample_rate);
    let duration = spec.len as f64 / fs;
    let sweep_rate = (spec.f_end - spec.f_start) / (2.0 * duration);
    let mut samples: Vec<f64> = (0..spec.len)
        .map(|i| {
            let t = i as f64 / fs;
            let phase = 2.0 * std::f64::consts::PI * (spec.f_start * t + sweep_rate * t * t);
            spec.amplitude * phase.sin()
        })
        .collect();

    if spec.taper_len > 0 {
        let window = hamming(2 * spec.taper_len);
        for i in 0..spec.taper_len {
            samples[i] *= window[i];
            samples[spec.len - 1 - i] *= window[2 * spec.taper_len - 1 - i];
        }
    }
    Ok(SensingWaveform::new(samples, spec.sample_rate))
}

/// Generates the pilot preamble: `repeats` exact copies of one untapered
/// down-chirp, back to back.
pub fn generate_pilot(spec: &PilotSpec) -> Result<SensingWaveform> {
    spec.validate()?;
    let one = generate_chirp(&spec.chirp_spec())?;
    let mut samples = Vec::with_capacity(spec.repeats * spec.chirp_len);
    for _ in 0..spec.repeats {
        samples.extend_from_slice(&one.samples);
    }
    Ok(SensingWaveform::new(samples, spec.sample_rate))
}

/// Assembles a full transmit sequence: pilot, then `n_frames` frames of
/// chirp followed by silence.
pub fn assemble_sensing_sequence(layout: &FrameLayout) -> Result<SensingWaveform> {
    layout.validate()?;
    let pilot = generate_pilot(&layout.pilot)?;
    let chirp = generate_chirp(&layout.chirp)?;
    let mut samples = Vec::with_capacity(layout.total_len());
    samples.extend_from_slice(&pilot.samples);
    for _ in 0..layout.n_frames {
        samples.extend_from_slice(&chirp.samples);
        samples.extend(std::iter::repeat(0.0).take(layout.silence_len));
    }
    debug_assert_eq!(samples.len(), layout.total_len());
    Ok(SensingWaveform::new(samples, layout.chirp.sample_rate))
}
