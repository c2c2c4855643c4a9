//! End-to-end orchestration: one config drives population generation,
//! trial rendering, preprocessing, extractor training, enrollment, and the
//! full verification study.
//!
//! Every stochastic stage draws from a stream keyed on the global seed and
//! a stage-specific lane, so one `seed` value pins the entire study and
//! reports reproduce byte for byte.
//!
//! The feature extractor is trained on a disjoint "transfer" population
//! drawn from the same generative model as the study subjects: the CNN
//! classifies transfer subjects, its head is removed, and the remaining
//! 128-unit embedding is applied unchanged to subjects it has never seen.

use std::cell::RefCell;
use std::sync::OnceLock;

use ndarray::{Array2, Array3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::earsim::{
    generate_population, mimicry_subject, render_trial, EnvironmentSpec, PopulationSpec, Subject,
};
use crate::error::{Error, Result};
use crate::evalharness::{
    attack_eval, cross_validate_detailed, measure_latency, AttackKind, AttackTrial, RocCurve,
    StudyReport,
};
use crate::neuralnet::{build_model, train, FeatureExtractor, TrainConfig, TrainReport};
use crate::oneclass::{enroll, EnrolledModel, EnrollmentConfig};
use crate::preprocess::{preprocess_recording, PreprocessConfig};
use crate::signals::{assemble_sensing_sequence, FrameLayout, SensingWaveform};
use crate::spectro::{tensor_from_diff, CropSpec, NormMode};

// Seed lanes, one per stochastic stage.
const LANE_POPULATION: u64 = 1;
const LANE_TRIALS: u64 = 2;
const LANE_TRANSFER_POPULATION: u64 = 3;
const LANE_TRANSFER_TRIALS: u64 = 4;
const LANE_NET_INIT: u64 = 5;
const LANE_NET_TRAIN: u64 = 6;
const LANE_CROSS_VAL: u64 = 7;
const LANE_ATTACKERS: u64 = 8;
const LANE_ATTACK_TRIALS: u64 = 9;
const LANE_LATENCY: u64 = 10;

/// Folds a seed and lane coordinates into one well-mixed stream key.
fn mix(parts: &[u64]) -> u64 {
    let mut state = 0x243f_6a88_85a3_08d3u64;
    for &p in parts {
        state ^= p;
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        state = (state ^ (state >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        state = (state ^ (state >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        state ^= state >> 31;
    }
    state
}

/// Caps the global worker pool to `SCRAUTH_THREADS` when the variable is
/// set to a positive integer; returns the number of threads in use. Safe
/// to call repeatedly; only the first call configures the pool.
pub fn init_threads() -> usize {
    static THREADS: OnceLock<usize> = OnceLock::new();
    *THREADS.get_or_init(|| {
        let requested = std::env::var("SCRAUTH_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n > 0);
        if let Some(n) = requested {
            // Ignore the error: the pool may already be built, in which
            // case the existing width stays in effect.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        rayon::current_num_threads()
    })
}

/// Everything a study run needs, in one serializable bundle. A persisted
/// config plus its seed reproduces a run bit for bit.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Global seed; every stage derives its own stream from it.
    pub seed: u64,
    /// Number of study subjects.
    pub subjects: usize,
    /// Recordings rendered per study subject.
    pub trials_per_subject: usize,
    /// Frames per recording (frame 0 is the ear-free reference).
    pub frames_per_trial: usize,
    /// Population shape shared by study, transfer, and attacker draws.
    pub population: PopulationSpec,
    /// Room/device acoustics and noise.
    pub environment: EnvironmentSpec,
    /// Receive-chain settings.
    pub preprocess: PreprocessConfig,
    /// Tensor normalization mode.
    pub norm: NormMode,
    /// Subjects in the disjoint extractor-training population.
    pub transfer_subjects: usize,
    /// Recordings per transfer subject.
    pub transfer_trials: usize,
    /// CNN training settings (its seed field is overridden by the lanes).
    pub train: TrainConfig,
    /// One-class classifier and its hyperparameters.
    pub enrollment: EnrollmentConfig,
    /// Cross-validation folds.
    pub folds: usize,
    /// Attackers drawn for the attack evaluation; 0 skips attacks.
    pub attackers: usize,
    /// Presentations per attacker-victim pair and attack kind.
    pub attack_trials: usize,
    /// Whether to time the verification stages.
    pub measure_latency: bool,
    /// Repetitions for the latency measurement.
    pub latency_runs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            subjects: 10,
            trials_per_subject: 200,
            frames_per_trial: 2,
            population: PopulationSpec::default(),
            environment: EnvironmentSpec::default(),
            preprocess: PreprocessConfig::default(),
            norm: NormMode::default(),
            transfer_subjects: 10,
            transfer_trials: 40,
            train: TrainConfig::default(),
            enrollment: EnrollmentConfig::default(),
            folds: 5,
            attackers: 5,
            attack_trials: 4,
            measure_latency: true,
            latency_runs: 50,
        }
    }
}

impl PipelineConfig {
    /// Checks cross-field consistency before a run.
    pub fn validate(&self) -> Result<()> {
        if self.subjects < 2 {
            return Err(Error::Config(
                "a study needs at least 2 subjects (enrollee plus impostors)".into(),
            ));
        }
        if self.trials_per_subject < self.folds {
            return Err(Error::Config(format!(
                "{} trials per subject cannot fill {} folds",
                self.trials_per_subject, self.folds
            )));
        }
        if self.folds < 2 {
            return Err(Error::Config("cross-validation needs at least 2 folds".into()));
        }
        if self.frames_per_trial < 2 {
            return Err(Error::Config(
                "a trial needs at least 2 frames: the reference and one sensing frame".into(),
            ));
        }
        if self.transfer_subjects < 2 {
            return Err(Error::Config(
                "extractor training needs at least 2 transfer subjects".into(),
            ));
        }
        if self.transfer_trials == 0 {
            return Err(Error::Config("transfer subjects need at least one trial".into()));
        }
        if self.measure_latency && self.latency_runs == 0 {
            return Err(Error::Config("latency measurement needs at least one run".into()));
        }
        Ok(())
    }

    /// Frame layout implied by `frames_per_trial`.
    pub fn layout(&self) -> FrameLayout {
        FrameLayout::with_frames(self.frames_per_trial)
    }
}

/// Weight-initialization seed the pipeline derives for the CNN.
pub fn net_init_seed(seed: u64) -> u64 {
    mix(&[seed, LANE_NET_INIT])
}

/// Shuffle/dropout seed the pipeline derives for CNN training.
pub fn net_train_seed(seed: u64) -> u64 {
    mix(&[seed, LANE_NET_TRAIN])
}

/// One simulated recording with its provenance.
#[derive(Debug, Clone)]
pub struct RenderedRecording {
    /// Subject the trial belongs to.
    pub subject: String,
    /// Trial index within the subject.
    pub trial: usize,
    /// Seed this recording was rendered with.
    pub seed: u64,
    /// The microphone signal.
    pub recording: SensingWaveform,
}

/// Renders the raw study recordings (population and per-trial seeds exactly
/// as [`run_study`] would draw them) without preprocessing, for export.
pub fn render_recordings(cfg: &PipelineConfig) -> Result<Vec<RenderedRecording>> {
    cfg.validate()?;
    init_threads();
    let layout = cfg.layout();
    let tx = assemble_sensing_sequence(&layout)?;
    let pop_spec = PopulationSpec {
        n_subjects: cfg.subjects,
        ..cfg.population
    };
    let subjects = generate_population(&pop_spec, mix(&[cfg.seed, LANE_POPULATION]))?;
    let jobs: Vec<(usize, usize)> = (0..subjects.len())
        .flat_map(|s| (0..cfg.trials_per_subject).map(move |t| (s, t)))
        .collect();
    jobs.par_iter()
        .map(|&(s, t)| {
            let trial_seed = mix(&[cfg.seed, LANE_TRIALS, s as u64, t as u64]);
            let recording =
                render_trial(&tx, &layout, &subjects[s], &cfg.environment, 1, trial_seed)?;
            Ok(RenderedRecording {
                subject: subjects[s].id.clone(),
                trial: t,
                seed: trial_seed,
                recording,
            })
        })
        .collect()
}

/// Renders one trial and runs the receive chain, returning the normalized
/// `(65, 158, 2)` tensor of the first sensing frame against the reference.
pub fn render_trial_tensor(
    tx: &SensingWaveform,
    layout: &FrameLayout,
    subject: &Subject,
    env: &EnvironmentSpec,
    pre: &PreprocessConfig,
    norm: NormMode,
    trial_seed: u64,
) -> Result<Array3<f64>> {
    let recording = render_trial(tx, layout, subject, env, 1, trial_seed)?;
    let processed = preprocess_recording(&recording, layout, pre)?;
    let tensor = tensor_from_diff(&processed.diffs[0], &CropSpec::default(), norm)?;
    Ok(tensor.data)
}

/// One subject's rendered and preprocessed trials.
#[derive(Debug, Clone)]
pub struct RenderedUser {
    /// Subject identifier.
    pub id: String,
    /// One tensor per trial.
    pub tensors: Vec<Array3<f64>>,
}

/// Renders `trials` recordings per subject and preprocesses them into
/// tensors, in parallel, deterministically keyed on `(seed, lane, subject,
/// trial)`.
pub fn render_dataset(
    subjects: &[Subject],
    trials: usize,
    layout: &FrameLayout,
    env: &EnvironmentSpec,
    pre: &PreprocessConfig,
    norm: NormMode,
    seed: u64,
    lane: u64,
) -> Result<Vec<RenderedUser>> {
    let tx = assemble_sensing_sequence(layout)?;
    let jobs: Vec<(usize, usize)> = (0..subjects.len())
        .flat_map(|s| (0..trials).map(move |t| (s, t)))
        .collect();
    let tensors: Vec<Array3<f64>> = jobs
        .par_iter()
        .map(|&(s, t)| {
            let trial_seed = mix(&[seed, lane, s as u64, t as u64]);
            render_trial_tensor(&tx, layout, &subjects[s], env, pre, norm, trial_seed)
        })
        .collect::<Result<_>>()?;

    let mut users: Vec<RenderedUser> = subjects
        .iter()
        .map(|subj| RenderedUser {
            id: subj.id.clone(),
            tensors: Vec::with_capacity(trials),
        })
        .collect();
    for ((s, _), tensor) in jobs.into_iter().zip(tensors) {
        users[s].tensors.push(tensor);
    }
    Ok(users)
}

/// Trains the transfer CNN and returns the resulting feature extractor.
///
/// A dedicated population of `transfer_subjects` is drawn and rendered;
/// the CNN learns to classify them, and the classification head is then
/// dropped. Weights are `f32`: ample for inference-grade features and
/// roughly twice as fast as `f64` on the dense kernels.
pub fn train_transfer_extractor(
    cfg: &PipelineConfig,
) -> Result<(FeatureExtractor<f32>, TrainReport)> {
    let pop_spec = PopulationSpec {
        n_subjects: cfg.transfer_subjects,
        ..cfg.population
    };
    let transfer = generate_population(&pop_spec, mix(&[cfg.seed, LANE_TRANSFER_POPULATION]))?;
    let rendered = render_dataset(
        &transfer,
        cfg.transfer_trials,
        &cfg.layout(),
        &cfg.environment,
        &cfg.preprocess,
        cfg.norm,
        cfg.seed,
        LANE_TRANSFER_TRIALS,
    )?;
    let data: Vec<(Array3<f64>, usize)> = rendered
        .into_iter()
        .enumerate()
        .flat_map(|(label, user)| user.tensors.into_iter().map(move |t| (t, label)))
        .collect();

    let mut model = build_model::<f32>(cfg.transfer_subjects, mix(&[cfg.seed, LANE_NET_INIT]))?;
    let train_cfg = TrainConfig {
        seed: mix(&[cfg.seed, LANE_NET_TRAIN]),
        ..cfg.train
    };
    let report = train(&mut model, &data, &train_cfg)?;
    Ok((FeatureExtractor::from_model(model)?, report))
}

/// Extracted features for one study subject.
#[derive(Debug, Clone)]
pub struct UserFeatures {
    /// Subject identifier.
    pub id: String,
    /// `(trials, 128)` feature matrix.
    pub features: Array2<f64>,
}

/// The study population with features extracted, plus the artifacts the
/// later stages need.
pub struct StudyContext {
    /// Study subjects, in id order.
    pub subjects: Vec<Subject>,
    /// Features per subject, aligned with `subjects`.
    pub users: Vec<UserFeatures>,
    /// The trained transfer extractor.
    pub extractor: FeatureExtractor<f32>,
    /// Loss history of the transfer training.
    pub train_report: TrainReport,
}

/// Draws the study population, trains the extractor, and renders and
/// featurizes every study trial.
pub fn prepare_study(cfg: &PipelineConfig) -> Result<StudyContext> {
    cfg.validate()?;
    init_threads();
    let (extractor, train_report) = train_transfer_extractor(cfg)?;

    let pop_spec = PopulationSpec {
        n_subjects: cfg.subjects,
        ..cfg.population
    };
    let subjects = generate_population(&pop_spec, mix(&[cfg.seed, LANE_POPULATION]))?;
    let rendered = render_dataset(
        &subjects,
        cfg.trials_per_subject,
        &cfg.layout(),
        &cfg.environment,
        &cfg.preprocess,
        cfg.norm,
        cfg.seed,
        LANE_TRIALS,
    )?;
    let users = rendered
        .into_iter()
        .map(|user| {
            Ok(UserFeatures {
                id: user.id,
                features: extractor.extract_batch(&user.tensors)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StudyContext {
        subjects,
        users,
        extractor,
        train_report,
    })
}

/// A study report together with the plot-ready curves that back it.
pub struct StudyArtifacts {
    /// The serializable study outcome.
    pub report: StudyReport,
    /// Per-user ROC curves, aligned with `report.cv.per_user`.
    pub roc_curves: Vec<RocCurve>,
    /// Loss history of the transfer training.
    pub train_report: TrainReport,
}

/// Runs the full verification study: cross-validation, attack evaluation,
/// and (optionally) latency measurement, per the config.
pub fn run_study(cfg: &PipelineConfig) -> Result<StudyArtifacts> {
    let ctx = prepare_study(cfg)?;
    let named: Vec<(String, Array2<f64>)> = ctx
        .users
        .iter()
        .map(|u| (u.id.clone(), u.features.clone()))
        .collect();
    let (cv, roc_curves) = cross_validate_detailed(
        &named,
        cfg.folds,
        &cfg.enrollment,
        mix(&[cfg.seed, LANE_CROSS_VAL]),
    )?;

    let attacks = if cfg.attackers > 0 && cfg.attack_trials > 0 {
        attack_eval(&attack_trials(cfg, &ctx)?)?
    } else {
        Vec::new()
    };

    let latency = if cfg.measure_latency {
        Some(measure_stage_latency(cfg, &ctx)?)
    } else {
        None
    };

    let report = StudyReport {
        seed: cfg.seed,
        classifier: cfg.enrollment.kind,
        subjects: cfg.subjects,
        trials_per_subject: cfg.trials_per_subject,
        cv,
        attacks,
        latency,
    };
    Ok(StudyArtifacts {
        report,
        roc_curves,
        train_report: ctx.train_report,
    })
}

/// Runs only the attack half of the study (extractor, victim models,
/// attack presentations), skipping cross-validation and latency.
pub fn run_attack_study(cfg: &PipelineConfig) -> Result<StudyArtifacts> {
    if cfg.attackers == 0 || cfg.attack_trials == 0 {
        return Err(Error::Config(
            "attack study needs attackers >= 1 and attack_trials >= 1".into(),
        ));
    }
    let ctx = prepare_study(cfg)?;
    let named: Vec<(String, Array2<f64>)> = ctx
        .users
        .iter()
        .map(|u| (u.id.clone(), u.features.clone()))
        .collect();
    // Attack tables still need baseline per-user quality for context, so
    // run the same CV protocol.
    let (cv, roc_curves) = cross_validate_detailed(
        &named,
        cfg.folds,
        &cfg.enrollment,
        mix(&[cfg.seed, LANE_CROSS_VAL]),
    )?;
    let attacks = attack_eval(&attack_trials(cfg, &ctx)?)?;
    let report = StudyReport {
        seed: cfg.seed,
        classifier: cfg.enrollment.kind,
        subjects: cfg.subjects,
        trials_per_subject: cfg.trials_per_subject,
        cv,
        attacks,
        latency: None,
    };
    Ok(StudyArtifacts {
        report,
        roc_curves,
        train_report: ctx.train_report,
    })
}

/// Enrolls one model per study subject on all of their features.
fn enroll_victims(cfg: &PipelineConfig, ctx: &StudyContext) -> Result<Vec<EnrolledModel>> {
    ctx.users
        .iter()
        .map(|u| Ok(enroll(u.features.view(), &cfg.enrollment)?.model))
        .collect()
}

/// Renders and scores all attack presentations.
///
/// Zero-effort attackers present their own echoes to every victim (one
/// rendering per attacker trial, scored against each victim). Mimicry
/// attackers copy the victim's placement behaviour, so each attacker-victim
/// pair is rendered separately.
fn attack_trials(cfg: &PipelineConfig, ctx: &StudyContext) -> Result<Vec<AttackTrial>> {
    let victims = enroll_victims(cfg, ctx)?;
    let layout = cfg.layout();
    let tx = assemble_sensing_sequence(&layout)?;
    let pop_spec = PopulationSpec {
        n_subjects: cfg.attackers,
        ..cfg.population
    };
    let attackers = generate_population(&pop_spec, mix(&[cfg.seed, LANE_ATTACKERS]))?;

    let mut trials = Vec::new();

    // Zero-effort: features are victim-independent.
    let zero_jobs: Vec<(usize, usize)> = (0..attackers.len())
        .flat_map(|a| (0..cfg.attack_trials).map(move |t| (a, t)))
        .collect();
    let zero_features: Vec<Vec<f64>> = zero_jobs
        .par_iter()
        .map(|&(a, t)| {
            let trial_seed = mix(&[cfg.seed, LANE_ATTACK_TRIALS, 0, a as u64, t as u64]);
            let tensor = render_trial_tensor(
                &tx,
                &layout,
                &attackers[a],
                &cfg.environment,
                &cfg.preprocess,
                cfg.norm,
                trial_seed,
            )?;
            ctx.extractor.extract(&tensor)
        })
        .collect::<Result<_>>()?;
    for feature in &zero_features {
        for victim in &victims {
            let decision = victim.decide(ndarray::ArrayView1::from(feature.as_slice()))?;
            trials.push(AttackTrial {
                kind: AttackKind::ZeroEffort,
                score: decision.score,
                accepted: decision.accepted,
            });
        }
    }

    // Mimicry: the attacker adopts the victim's placement statistics, so
    // every (attacker, victim, trial) triple is its own rendering.
    let mimic_jobs: Vec<(usize, usize, usize)> = (0..attackers.len())
        .flat_map(|a| {
            (0..ctx.subjects.len())
                .flat_map(move |v| (0..cfg.attack_trials).map(move |t| (a, v, t)))
        })
        .collect();
    let mimic_scores: Vec<(f64, bool)> = mimic_jobs
        .par_iter()
        .map(|&(a, v, t)| {
            let imitator = mimicry_subject(&attackers[a], &ctx.subjects[v]);
            let trial_seed =
                mix(&[cfg.seed, LANE_ATTACK_TRIALS, 1, a as u64, v as u64, t as u64]);
            let tensor = render_trial_tensor(
                &tx,
                &layout,
                &imitator,
                &cfg.environment,
                &cfg.preprocess,
                cfg.norm,
                trial_seed,
            )?;
            let feature = ctx.extractor.extract(&tensor)?;
            let decision = victims[v].decide(ndarray::ArrayView1::from(feature.as_slice()))?;
            Ok((decision.score, decision.accepted))
        })
        .collect::<Result<_>>()?;
    for (score, accepted) in mimic_scores {
        trials.push(AttackTrial {
            kind: AttackKind::Mimicry,
            score,
            accepted,
        });
    }
    Ok(trials)
}

/// Measures the verification-stage latency without running the full study:
/// trains the extractor, renders and enrolls only the first study subject,
/// and times the three stages on one fresh trial.
pub fn run_latency(cfg: &PipelineConfig) -> Result<crate::evalharness::LatencyBreakdown> {
    cfg.validate()?;
    init_threads();
    let (extractor, train_report) = train_transfer_extractor(cfg)?;
    let pop_spec = PopulationSpec {
        n_subjects: cfg.subjects,
        ..cfg.population
    };
    let subjects = generate_population(&pop_spec, mix(&[cfg.seed, LANE_POPULATION]))?;
    let rendered = render_dataset(
        &subjects[..1],
        cfg.trials_per_subject,
        &cfg.layout(),
        &cfg.environment,
        &cfg.preprocess,
        cfg.norm,
        cfg.seed,
        LANE_TRIALS,
    )?;
    let features = extractor.extract_batch(&rendered[0].tensors)?;
    let ctx = StudyContext {
        subjects,
        users: vec![UserFeatures {
            id: rendered[0].id.clone(),
            features,
        }],
        extractor,
        train_report,
    };
    measure_stage_latency(cfg, &ctx)
}

/// Times preprocess / extract / classify on one representative trial.
fn measure_stage_latency(
    cfg: &PipelineConfig,
    ctx: &StudyContext,
) -> Result<crate::evalharness::LatencyBreakdown> {
    let layout = cfg.layout();
    let tx = assemble_sensing_sequence(&layout)?;
    let recording = render_trial(
        &tx,
        &layout,
        &ctx.subjects[0],
        &cfg.environment,
        1,
        mix(&[cfg.seed, LANE_LATENCY]),
    )?;
    let model = enroll(ctx.users[0].features.view(), &cfg.enrollment)?.model;

    // The stages hand intermediate products to each other through cells;
    // they run strictly in order within each timed repetition.
    let tensor_cell: RefCell<Option<Array3<f64>>> = RefCell::new(None);
    let feature_cell: RefCell<Option<Vec<f64>>> = RefCell::new(None);
    measure_latency(
        cfg.latency_runs,
        || {
            let processed = preprocess_recording(&recording, &layout, &cfg.preprocess)
                .expect("recording was rendered by this pipeline");
            let tensor = tensor_from_diff(&processed.diffs[0], &CropSpec::default(), cfg.norm)
                .expect("diff produced by this pipeline");
            *tensor_cell.borrow_mut() = Some(tensor.data);
        },
        || {
            let tensor = tensor_cell.borrow();
            let feature = ctx
                .extractor
                .extract(tensor.as_ref().expect("preprocess stage ran first"))
                .expect("tensor shape matches the extractor");
            *feature_cell.borrow_mut() = Some(feature);
        },
        || {
            let feature = feature_cell.borrow();
            let view =
                ndarray::ArrayView1::from(feature.as_ref().expect("extract stage ran").as_slice());
            model.decide(view).expect("feature dimension matches");
        },
    )
}
