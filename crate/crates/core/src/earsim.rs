//! Synthetic acoustic channel for rendering labelled ear-echo datasets.
//!
//! A rendered trial is the transmitted sequence passed through:
//!
//! - a dominant direct path (speaker to mic coupling) plus a few static
//!   reflections — present for the whole recording,
//! - an ear path: a sparse FIR echo (3+ taps within 5..60 samples of extra
//!   delay) whose spectrum is shaped by per-band absorption gains, gated
//!   on from a configurable frame so the first frame stays ear-free,
//! - additive noise calibrated to a target SNR.
//!
//! Per-trial placement jitter (a random delay offset and gain scale on the
//! ear taps) models how differently the same user holds the phone each
//! time. Subjects are drawn with a guaranteed minimum separation between
//! their ear responses so a population is learnable by construction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::butterworth_bandpass;
use crate::signals::{FrameLayout, SensingWaveform};

/// Smallest allowed ear-tap delay, samples (on top of the direct path).
pub const EAR_DELAY_MIN: usize = 5;

/// Largest allowed ear-tap delay, samples.
pub const EAR_DELAY_MAX: usize = 60;

/// The sensing band the absorption profile must cover, Hz.
pub const SENSING_BAND: (f64, f64) = (17_000.0, 23_000.0);

/// One FIR tap: `gain * x[t - delay]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathTap {
    /// Delay in samples.
    pub delay: usize,
    /// Linear gain (may be negative: reflections can invert).
    pub gain: f64,
}

/// Absorption of one frequency band of the ear path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionBand {
    /// Band lower edge, Hz.
    pub low_hz: f64,
    /// Band upper edge, Hz.
    pub high_hz: f64,
    /// Linear gain in [0, 1] applied to this band.
    pub gain: f64,
}

/// The acoustic signature of one ear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarProfile {
    /// Sparse echo taps, delays strictly increasing within
    /// [`EAR_DELAY_MIN`], [`EAR_DELAY_MAX`].
    pub taps: Vec<PathTap>,
    /// Per-band absorption; at least 4 bands whose union covers the
    /// sensing band.
    pub absorption: Vec<AbsorptionBand>,
}

impl EarProfile {
    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        if self.taps.len() < 3 {
            return Err(Error::InvalidParameter(format!(
                "ear profile needs >= 3 taps, has {}",
                self.taps.len()
            )));
        }
        let mut prev: Option<usize> = None;
        for tap in &self.taps {
            if tap.delay < EAR_DELAY_MIN || tap.delay > EAR_DELAY_MAX {
                return Err(Error::InvalidParameter(format!(
                    "ear tap delay {} outside [{EAR_DELAY_MIN}, {EAR_DELAY_MAX}]",
                    tap.delay
                )));
            }
            if let Some(p) = prev {
                if tap.delay <= p {
                    return Err(Error::InvalidParameter(
                        "ear tap delays must be strictly increasing".into(),
                    ));
                }
            }
            prev = Some(tap.delay);
        }
        let total: f64 = self.taps.iter().map(|t| t.gain.abs()).sum();
        if total > 1.0 {
            return Err(Error::InvalidParameter(format!(
                "ear tap gains sum to {total:.3} in magnitude; must be <= 1"
            )));
        }
        if self.absorption.len() < 4 {
            return Err(Error::InvalidParameter(format!(
                "ear profile needs >= 4 absorption bands, has {}",
                self.absorption.len()
            )));
        }
        // The bands must jointly cover the sensing band: sort by lower
        // edge and walk the covered frontier.
        let mut bands = self.absorption.clone();
        bands.sort_by(|a, b| a.low_hz.partial_cmp(&b.low_hz).unwrap());
        let mut covered = SENSING_BAND.0;
        for b in &bands {
            if !(b.low_hz < b.high_hz) || !(0.0..=1.0).contains(&b.gain) {
                return Err(Error::InvalidParameter(format!(
                    "bad absorption band {b:?}"
                )));
            }
            if b.low_hz <= covered {
                covered = covered.max(b.high_hz);
            }
        }
        if covered < SENSING_BAND.1 {
            return Err(Error::InvalidParameter(format!(
                "absorption bands cover only up to {covered} Hz of the sensing band"
            )));
        }
        Ok(())
    }

    /// Dense gain-by-delay vector over the allowed delay range, used for
    /// population separation distances.
    pub fn tap_vector(&self) -> Vec<f64> {
        let mut v = vec![0.0; EAR_DELAY_MAX - EAR_DELAY_MIN + 1];
        for tap in &self.taps {
            v[tap.delay - EAR_DELAY_MIN] += tap.gain;
        }
        v
    }
}

/// Euclidean distance between two ears' dense tap vectors.
pub fn ear_distance(a: &EarProfile, b: &EarProfile) -> f64 {
    a.tap_vector()
        .iter()
        .zip(b.tap_vector())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Additive noise models.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Gaussian white noise, calibrated so the measured SNR inside the
    /// sensing band equals `snr_db`.
    #[default]
    White,
    /// Speech-babble surrogate: band-limited noise below 15 kHz,
    /// calibrated against total (broadband) signal power. It barely
    /// overlaps the sensing band, which is the point: it stresses the
    /// bandpass stage, not the classifier.
    Babble,
    /// No noise; useful for calibration and latency runs.
    None,
}

/// Static acoustics of the device and room.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    /// Dominant direct path from speaker to mic.
    pub direct: PathTap,
    /// Static reflections (device body, nearby surfaces).
    pub reflections: Vec<PathTap>,
    /// Noise model.
    pub noise: NoiseKind,
    /// Target signal-to-noise ratio, dB.
    pub snr_db: f64,
}

impl Default for EnvironmentSpec {
    fn default() -> Self {
        Self {
            direct: PathTap { delay: 12, gain: 0.55 },
            reflections: vec![
                PathTap { delay: 150, gain: 0.12 },
                PathTap { delay: 410, gain: -0.07 },
            ],
            noise: NoiseKind::White,
            snr_db: 25.0,
        }
    }
}

impl EnvironmentSpec {
    /// Checks the direct path dominates the reflections.
    pub fn validate(&self) -> Result<()> {
        if self.direct.gain.abs() <= 0.0 {
            return Err(Error::InvalidParameter("direct path gain must be non-zero".into()));
        }
        for r in &self.reflections {
            if r.gain.abs() >= self.direct.gain.abs() {
                return Err(Error::InvalidParameter(format!(
                    "reflection gain {} not below direct gain {}",
                    r.gain, self.direct.gain
                )));
            }
        }
        Ok(())
    }
}

/// How a subject places the phone against their ear, as per-trial jitter
/// statistics on the ear taps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacementStats {
    /// Mean extra delay, samples.
    pub delay_mean: f64,
    /// Delay standard deviation, samples.
    pub delay_sigma: f64,
    /// Mean gain scale (1 = nominal).
    pub gain_mean: f64,
    /// Gain-scale standard deviation.
    pub gain_sigma: f64,
}

impl Default for PlacementStats {
    fn default() -> Self {
        Self {
            delay_mean: 3.0,
            delay_sigma: 1.0,
            gain_mean: 1.0,
            gain_sigma: 0.05,
        }
    }
}

/// One enrolled (or attacking) person: an ear and how they hold the phone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    /// Identifier, e.g. `"s03"`.
    pub id: String,
    /// Ear signature.
    pub ear: EarProfile,
    /// Placement behaviour.
    pub placement: PlacementStats,
}

/// A mimicry attacker: `attacker`'s ear presented with `victim`'s observed
/// placement behaviour.
pub fn mimicry_subject(attacker: &Subject, victim: &Subject) -> Subject {
    Subject {
        id: format!("{}~as~{}", attacker.id, victim.id),
        ear: attacker.ear.clone(),
        placement: victim.placement,
    }
}

// --- Population generation -------------------------------------------------

/// Parameters for drawing a population of distinct subjects.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationSpec {
    /// Number of subjects to draw.
    pub n_subjects: usize,
    /// Tap count range per ear.
    pub min_taps: usize,
    /// Inclusive upper bound on taps per ear.
    pub max_taps: usize,
    /// Total |gain| across an ear's taps.
    pub ear_gain_total: f64,
    /// Minimum pairwise [`ear_distance`] between accepted subjects.
    pub min_separation: f64,
    /// Rejection-sampling budget per subject before giving up.
    pub max_retries: usize,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            n_subjects: 10,
            min_taps: 3,
            max_taps: 6,
            ear_gain_total: 0.35,
            min_separation: 0.12,
            max_retries: 1000,
        }
    }
}

fn random_ear(spec: &PopulationSpec, rng: &mut ChaCha8Rng) -> EarProfile {
    let n_taps = rng.random_range(spec.min_taps..=spec.max_taps);
    // Distinct sorted delays by sampling without replacement.
    let mut delays: Vec<usize> = Vec::with_capacity(n_taps);
    while delays.len() < n_taps {
        let d = rng.random_range(EAR_DELAY_MIN..=EAR_DELAY_MAX);
        if !delays.contains(&d) {
            delays.push(d);
        }
    }
    delays.sort_unstable();

    let mut gains: Vec<f64> = (0..n_taps).map(|_| rng.random_range(-1.0..1.0)).collect();
    let total: f64 = gains.iter().map(|g| g.abs()).sum();
    for g in &mut gains {
        *g *= spec.ear_gain_total / total;
    }

    let edges = [17_000.0, 18_500.0, 20_000.0, 21_500.0, 23_000.0];
    let absorption = edges
        .windows(2)
        .map(|w| AbsorptionBand {
            low_hz: w[0],
            high_hz: w[1],
            gain: rng.random_range(0.3..1.0),
        })
        .collect();

    EarProfile {
        taps: delays
            .into_iter()
            .zip(gains)
            .map(|(delay, gain)| PathTap { delay, gain })
            .collect(),
        absorption,
    }
}

/// Draws `n_subjects` subjects whose ears are pairwise separated by at
/// least `min_separation`. Deterministic for a given seed.
pub fn generate_population(spec: &PopulationSpec, seed: u64) -> Result<Vec<Subject>> {
    if spec.n_subjects == 0 || spec.min_taps < 3 || spec.max_taps < spec.min_taps {
        return Err(Error::InvalidParameter(format!("bad population spec {spec:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut subjects: Vec<Subject> = Vec::with_capacity(spec.n_subjects);
    for idx in 0..spec.n_subjects {
        let mut accepted = None;
        for _ in 0..spec.max_retries {
            let ear = random_ear(spec, &mut rng);
            debug_assert!(ear.validate().is_ok());
            let far_enough = subjects
                .iter()
                .all(|s| ear_distance(&s.ear, &ear) >= spec.min_separation);
            if far_enough {
                accepted = Some(ear);
                break;
            }
        }
        let ear = accepted.ok_or_else(|| {
            Error::Generation(format!(
                "could not place subject {idx} with separation {} after {} retries",
                spec.min_separation, spec.max_retries
            ))
        })?;
        // Placement is repeatable per person: delay scatter is around a
        // sample or less, gain scatter a few percent.
        let placement = PlacementStats {
            delay_mean: rng.random_range(0.0..6.0),
            delay_sigma: rng.random_range(0.3..0.9),
            gain_mean: rng.random_range(0.85..1.0),
            gain_sigma: rng.random_range(0.02..0.06),
        };
        subjects.push(Subject {
            id: format!("s{idx:02}"),
            ear,
            placement,
        });
    }
    Ok(subjects)
}

// --- Rendering ---------------------------------------------------------------

/// Extra zero samples appended after the last echo can arrive.
const RENDER_TAIL: usize = 480;

fn add_delayed(out: &mut [f64], x: &[f64], delay: usize, gain: f64) {
    for (i, &v) in x.iter().enumerate() {
        out[i + delay] += gain * v;
    }
}

fn power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Renders one trial: `tx` through the environment and the subject's ear,
/// with the ear path gated on from `ear_present_from_frame` (the frames
/// before it, at least frame 0, stay ear-free and serve as reference).
///
/// Fails with [`Error::Clipping`] if any output sample exceeds full scale.
pub fn render_trial(
    tx: &SensingWaveform,
    layout: &FrameLayout,
    subject: &Subject,
    env: &EnvironmentSpec,
    ear_present_from_frame: usize,
    seed: u64,
) -> Result<SensingWaveform> {
    layout.validate()?;
    subject.ear.validate()?;
    env.validate()?;
    if ear_present_from_frame == 0 || ear_present_from_frame >= layout.n_frames {
        return Err(Error::InvalidParameter(format!(
            "ear_present_from_frame {} outside 1..{}",
            ear_present_from_frame, layout.n_frames
        )));
    }

    let fs = f64::from(tx.sample_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Placement jitter for this trial.
    let delay_jitter: f64 =
        subject.placement.delay_mean + subject.placement.delay_sigma * {
            let z: f64 = StandardNormal.sample(&mut rng);
            z
        };
    let delay_jitter = delay_jitter.round().max(0.0) as usize;
    let gain_scale: f64 = {
        let z: f64 = StandardNormal.sample(&mut rng);
        (subject.placement.gain_mean + subject.placement.gain_sigma * z).max(0.05)
    };

    let max_reflection = env.reflections.iter().map(|r| r.delay).max().unwrap_or(0);
    let max_delay = env
        .direct
        .delay
        .max(max_reflection)
        .max(env.direct.delay + EAR_DELAY_MAX + delay_jitter);
    let out_len = tx.len() + max_delay + RENDER_TAIL;
    let mut out = vec![0.0; out_len];

    // Static paths hear the whole transmission.
    add_delayed(&mut out, &tx.samples, env.direct.delay, env.direct.gain);
    for r in &env.reflections {
        add_delayed(&mut out, &tx.samples, r.delay, r.gain);
    }

    // Ear path: driven only by the transmission from the gate onward.
    let gate = layout.pilot.repeats * layout.pilot.chirp_len
        + ear_present_from_frame * layout.frame_len();
    let mut gated = vec![0.0; tx.len()];
    gated[gate..].copy_from_slice(&tx.samples[gate..]);

    let mut ear_raw = vec![0.0; out_len];
    for tap in &subject.ear.taps {
        add_delayed(
            &mut ear_raw,
            &gated,
            env.direct.delay + tap.delay + delay_jitter,
            tap.gain * gain_scale,
        );
    }
    // Frequency-dependent absorption: sum of band-filtered copies.
    let mut ear_shaped = vec![0.0; out_len];
    for band in &subject.ear.absorption {
        let bp = butterworth_bandpass(2, band.low_hz, band.high_hz, fs)?;
        for (o, v) in ear_shaped.iter_mut().zip(bp.apply(&ear_raw)) {
            *o += band.gain * v;
        }
    }
    for (o, v) in out.iter_mut().zip(&ear_shaped) {
        *o += v;
    }

    // Noise, calibrated against the clean mix.
    match env.noise {
        NoiseKind::None => {}
        NoiseKind::White => {
            let white: Vec<f64> = (0..out_len)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z
                })
                .collect();
            // Calibrate in-band: measure signal and unit-noise power through
            // the sensing bandpass and scale the noise to hit snr_db.
            let band = butterworth_bandpass(5, SENSING_BAND.0, SENSING_BAND.1, fs)?;
            let p_sig = power(&band.apply(&out));
            let p_noise = power(&band.apply(&white));
            if p_sig > 0.0 && p_noise > 0.0 {
                let scale = (p_sig / (p_noise * 10f64.powf(env.snr_db / 10.0))).sqrt();
                for (o, n) in out.iter_mut().zip(&white) {
                    *o += scale * n;
                }
            }
        }
        NoiseKind::Babble => {
            let white: Vec<f64> = (0..out_len)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z
                })
                .collect();
            // Speech-band surrogate; broadband power calibration (the
            // babble spectrum barely reaches the sensing band, so an
            // in-band target would be meaningless).
            let speech = butterworth_bandpass(3, 200.0, 15_000.0, fs)?;
            let shaped = speech.apply(&white);
            let p_sig = power(&out);
            let p_noise = power(&shaped);
            if p_sig > 0.0 && p_noise > 0.0 {
                let scale = (p_sig / (p_noise * 10f64.powf(env.snr_db / 10.0))).sqrt();
                for (o, n) in out.iter_mut().zip(&shaped) {
                    *o += scale * n;
                }
            }
        }
    }

    let peak = out.iter().fold(0.0_f64, |m, &v| m.max(v.abs()));
    if peak > 1.0 {
        return Err(Error::Clipping { peak });
    }
    Ok(SensingWaveform::new(out, tx.sample_rate))
}
