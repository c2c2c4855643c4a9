//! `scrauth`: command-line front end for the ear-echo authentication
//! pipeline.
//!
//! Subcommands cover the full workflow — signal generation, trial
//! simulation, preprocessing, extractor training, feature extraction,
//! enrollment, verification, and the evaluation studies. All numeric
//! artifacts are raw little-endian `f32` files with JSON sidecars; all
//! reports are JSON plus CSV tables and SVG plots.
//!
//! Exit codes: 0 success, 1 pipeline failure, 2 usage error, and 3 for a
//! verification REJECT (so scripts can branch on the decision).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::{Array2, Array3, ArrayView1};

use scrauth_core::evalharness::plot::{line_plot, Series};
use scrauth_core::evalharness::StudyReport;
use scrauth_core::io::{
    read_tensor, read_waveform, write_frame_segment, write_tensor, write_waveform, TrialMeta,
    WaveRole,
};
use scrauth_core::neuralnet::{build_model, train, CnnModel, FeatureExtractor, TrainConfig};
use scrauth_core::oneclass::{enroll, ClassifierKind, EnrolledModel};
use scrauth_core::pipeline::{
    init_threads, net_init_seed, net_train_seed, render_recordings, run_attack_study, run_latency,
    run_study, PipelineConfig, StudyArtifacts,
};
use scrauth_core::preprocess::{preprocess_recording, PhaseDiffMode};
use scrauth_core::signals::{assemble_sensing_sequence, FrameLayout};
use scrauth_core::spectro::{tensor_from_diff, CropSpec};

/// Ear-echo acoustic authentication toolkit.
#[derive(Parser)]
#[command(name = "scrauth", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by config-driven subcommands.
#[derive(Args)]
struct ConfigOpts {
    /// Pipeline configuration file (JSON); defaults apply when omitted.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Global seed; overrides the config. When neither this flag nor the
    /// config provides one, a random seed is drawn and printed.
    #[arg(long)]
    seed: Option<u64>,
}

/// One-class classifier choice on the command line.
#[derive(Debug, Clone, Copy, ValueEnum)]
enum Classifier {
    Ocsvm,
    Lof,
}

impl From<Classifier> for ClassifierKind {
    fn from(c: Classifier) -> Self {
        match c {
            Classifier::Ocsvm => ClassifierKind::Ocsvm,
            Classifier::Lof => ClassifierKind::Lof,
        }
    }
}

/// Phase-difference handling on the command line.
#[derive(Debug, Clone, Copy, ValueEnum)]
enum PhaseWrap {
    /// Literal absolute difference of principal values.
    None,
    /// Wrapped angular distance.
    Angular,
}

impl From<PhaseWrap> for PhaseDiffMode {
    fn from(p: PhaseWrap) -> Self {
        match p {
            PhaseWrap::None => PhaseDiffMode::Literal,
            PhaseWrap::Angular => PhaseDiffMode::Angular,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the transmit sensing sequence (pilot plus chirp frames).
    GenSignal {
        #[command(flatten)]
        cfg: ConfigOpts,
        /// Frames in the sequence (config value when omitted).
        #[arg(long)]
        frames: Option<usize>,
        /// Output waveform (.f32 plus JSON sidecar).
        #[arg(long)]
        out: PathBuf,
    },
    /// Render synthetic trial recordings for a population.
    Simulate {
        #[command(flatten)]
        cfg: ConfigOpts,
        /// Number of subjects (config value when omitted).
        #[arg(long)]
        subjects: Option<usize>,
        /// Frames per trial (config value when omitted).
        #[arg(long)]
        frames: Option<usize>,
        /// Trials per subject (config value when omitted).
        #[arg(long)]
        trials: Option<usize>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the receive chain on one recording: synced segments + tensors.
    Preprocess {
        #[command(flatten)]
        cfg: ConfigOpts,
        /// Input recording (.f32 with sidecar).
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Frames in the recording (config value when omitted).
        #[arg(long)]
        frames: Option<usize>,
        /// Phase-difference mode.
        #[arg(long, value_enum)]
        phase_wrap: Option<PhaseWrap>,
    },
    /// Train the CNN on labelled tensors and save the checkpoint.
    TrainExtractor {
        #[command(flatten)]
        cfg: ConfigOpts,
        /// Directory of labelled feature tensors.
        #[arg(long)]
        data: PathBuf,
        /// Output checkpoint path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract 128-d feature vectors from tensors with a trained model.
    #[command(visible_alias = "extract")]
    Featurize {
        /// CNN checkpoint.
        #[arg(long)]
        model: PathBuf,
        /// Tensor file or directory of tensors.
        #[arg(long = "in", value_name = "PATH")]
        input: PathBuf,
        /// Output directory for feature files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Enroll a one-class model on a user's feature vectors.
    Enroll {
        #[command(flatten)]
        cfg: ConfigOpts,
        /// Feature file (vector or matrix) or directory of feature files.
        #[arg(long = "in", value_name = "PATH")]
        input: PathBuf,
        /// Output model path.
        #[arg(long)]
        out: PathBuf,
        /// Classifier kind (config value when omitted).
        #[arg(long, value_enum)]
        classifier: Option<Classifier>,
    },
    /// Verify a probe against an enrolled model (exit 0 accept, 3 reject).
    Verify {
        #[command(flatten)]
        cfg: ConfigOpts,
        /// Enrolled model file.
        #[arg(long)]
        model: PathBuf,
        /// Probe: feature vector, feature tensor, or raw recording.
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        /// CNN checkpoint; required when the probe is a tensor/recording.
        #[arg(long)]
        extractor: Option<PathBuf>,
        /// Frames in a recording probe (config value when omitted).
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Run the full synthetic verification study.
    Study {
        #[command(flatten)]
        cfg: ConfigOpts,
        /// Number of study subjects (config value when omitted).
        #[arg(long)]
        subjects: Option<usize>,
        /// Frames per trial (config value when omitted).
        #[arg(long)]
        frames: Option<usize>,
        /// Classifier kind (config value when omitted).
        #[arg(long, value_enum)]
        classifier: Option<Classifier>,
        /// Phase-difference mode (config value when omitted).
        #[arg(long, value_enum)]
        phase_wrap: Option<PhaseWrap>,
        /// Report directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate zero-effort and mimicry attacks against enrolled victims.
    AttackStudy {
        #[command(flatten)]
        cfg: ConfigOpts,
        /// Number of study subjects (config value when omitted).
        #[arg(long)]
        subjects: Option<usize>,
        /// Classifier kind (config value when omitted).
        #[arg(long, value_enum)]
        classifier: Option<Classifier>,
        /// Report directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Time the preprocess / extract / classify stages.
    Latency {
        #[command(flatten)]
        cfg: ConfigOpts,
        /// Optional directory for latency.json and latency.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Failures split by exit code.
enum CliError {
    /// Argument misuse beyond what clap can check (exit 2).
    Usage(String),
    /// Pipeline or I/O failure (exit 1).
    Pipeline(scrauth_core::Error),
}

impl From<scrauth_core::Error> for CliError {
    fn from(e: scrauth_core::Error) -> Self {
        CliError::Pipeline(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Pipeline(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Pipeline(e.into())
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_threads();
    match run(cli.command) {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Pipeline(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

/// Whether a subcommand's output depends on the global seed.
#[derive(PartialEq)]
enum Seeding {
    Stochastic,
    Deterministic,
}

/// Loads the pipeline config and settles the seed: flag beats config file.
/// For stochastic subcommands with no seed from either source, a random
/// seed is drawn and printed so the run can be reproduced.
fn resolve_config(opts: &ConfigOpts, seeding: Seeding) -> CliResult<PipelineConfig> {
    let (mut cfg, config_has_seed) = match &opts.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            let value: serde_json::Value = serde_json::from_str(&text)?;
            let has_seed = value.get("seed").is_some();
            (serde_json::from_value::<PipelineConfig>(value)?, has_seed)
        }
        None => (PipelineConfig::default(), false),
    };
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    } else if !config_has_seed && seeding == Seeding::Stochastic {
        cfg.seed = rand::random::<u64>();
        println!(
            "seed: {} (drawn at random; pass --seed {} to reproduce)",
            cfg.seed, cfg.seed
        );
    }
    Ok(cfg)
}

fn run(command: Command) -> CliResult<ExitCode> {
    match command {
        Command::GenSignal { cfg, frames, out } => gen_signal(&cfg, frames, &out),
        Command::Simulate {
            cfg,
            subjects,
            frames,
            trials,
            out,
        } => simulate(&cfg, subjects, frames, trials, &out),
        Command::Preprocess {
            cfg,
            input,
            out,
            frames,
            phase_wrap,
        } => preprocess(&cfg, &input, &out, frames, phase_wrap),
        Command::TrainExtractor { cfg, data, out } => train_extractor(&cfg, &data, &out),
        Command::Featurize { model, input, out } => featurize(&model, &input, &out),
        Command::Enroll {
            cfg,
            input,
            out,
            classifier,
        } => enroll_user(&cfg, &input, &out, classifier),
        Command::Verify {
            cfg,
            model,
            input,
            extractor,
            frames,
        } => verify(&cfg, &model, &input, extractor.as_deref(), frames),
        Command::Study {
            cfg,
            subjects,
            frames,
            classifier,
            phase_wrap,
            out,
        } => study(&cfg, subjects, frames, classifier, phase_wrap, &out),
        Command::AttackStudy {
            cfg,
            subjects,
            classifier,
            out,
        } => attack_study(&cfg, subjects, classifier, &out),
        Command::Latency { cfg, out } => latency(&cfg, out.as_deref()),
    }
}

fn gen_signal(opts: &ConfigOpts, frames: Option<usize>, out: &Path) -> CliResult<ExitCode> {
    let cfg = resolve_config(opts, Seeding::Deterministic)?;
    let layout = FrameLayout::with_frames(frames.unwrap_or(cfg.frames_per_trial));
    let tx = assemble_sensing_sequence(&layout)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_waveform(out, &tx, WaveRole::Tx, None)?;
    println!(
        "wrote {} samples ({} frames at {} Hz) to {}",
        tx.len(),
        layout.n_frames,
        tx.sample_rate,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn simulate(
    opts: &ConfigOpts,
    subjects: Option<usize>,
    frames: Option<usize>,
    trials: Option<usize>,
    out: &Path,
) -> CliResult<ExitCode> {
    let mut cfg = resolve_config(opts, Seeding::Stochastic)?;
    if let Some(n) = subjects {
        cfg.subjects = n;
    }
    if let Some(n) = frames {
        cfg.frames_per_trial = n;
    }
    if let Some(n) = trials {
        cfg.trials_per_subject = n;
    }
    fs::create_dir_all(out)?;
    fs::write(out.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;
    let tx = assemble_sensing_sequence(&cfg.layout())?;
    write_waveform(&out.join("tx.f32"), &tx, WaveRole::Tx, None)?;

    let recordings = render_recordings(&cfg)?;
    for r in &recordings {
        let path = out.join(format!("rec_{}_{:04}.f32", r.subject, r.trial));
        let meta = TrialMeta {
            subject: r.subject.clone(),
            kind: "genuine".into(),
            ear_present_from_frame: 1,
            seed: r.seed,
        };
        write_waveform(&path, &r.recording, WaveRole::Rx, Some(meta))?;
    }
    println!(
        "wrote {} recordings ({} subjects x {} trials, {} frames each) to {}",
        recordings.len(),
        cfg.subjects,
        cfg.trials_per_subject,
        cfg.frames_per_trial,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn preprocess(
    opts: &ConfigOpts,
    input: &Path,
    out: &Path,
    frames: Option<usize>,
    phase_wrap: Option<PhaseWrap>,
) -> CliResult<ExitCode> {
    let cfg = resolve_config(opts, Seeding::Deterministic)?;
    let mut pre = cfg.preprocess;
    if let Some(p) = phase_wrap {
        pre.phase_mode = p.into();
    }
    let (recording, sidecar) = read_waveform(input)?;
    let layout = FrameLayout::with_frames(frames.unwrap_or(cfg.frames_per_trial));
    let processed = preprocess_recording(&recording, &layout, &pre)?;

    fs::create_dir_all(out)?;
    for (i, segment) in processed.segments.iter().enumerate() {
        write_frame_segment(
            &out.join(format!("frame_{i:02}.f32")),
            segment,
            recording.sample_rate,
            i,
            processed.offsets[i],
        )?;
    }
    let subject = sidecar.trial.as_ref().map(|t| t.subject.as_str());
    let trial_kind = sidecar.trial.as_ref().map(|t| t.kind.as_str());
    for (i, diff) in processed.diffs.iter().enumerate() {
        let tensor = tensor_from_diff(diff, &CropSpec::default(), cfg.norm)?;
        write_tensor(
            &out.join(format!("tensor_{:02}.f32", i + 1)),
            tensor.data.view().into_dyn(),
            "feature_tensor",
            subject,
            trial_kind,
        )?;
    }
    println!(
        "frames start at sample {}; wrote {} segments and {} tensors to {}",
        processed.frames_start,
        processed.segments.len(),
        processed.diffs.len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

/// All `.f32` files in a directory, sorted by name for determinism.
fn f32_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "f32"))
        .collect();
    files.sort();
    Ok(files)
}

fn train_extractor(opts: &ConfigOpts, data: &Path, out: &Path) -> CliResult<ExitCode> {
    let cfg = resolve_config(opts, Seeding::Stochastic)?;
    // Gather labelled tensors; the subject sidecar field is the label.
    let mut by_subject: Vec<(String, Array3<f64>)> = Vec::new();
    for path in f32_files(data)? {
        let (tensor, sidecar) = read_tensor(&path)?;
        if sidecar.kind != "feature_tensor" {
            continue;
        }
        let subject = sidecar.subject.ok_or_else(|| {
            CliError::Usage(format!(
                "{} has no subject label; training tensors must be labelled",
                path.display()
            ))
        })?;
        let tensor = tensor
            .into_dimensionality::<ndarray::Ix3>()
            .map_err(|_| CliError::Usage(format!("{} is not a 3-d tensor", path.display())))?;
        by_subject.push((subject, tensor));
    }
    if by_subject.is_empty() {
        return Err(CliError::Usage(format!(
            "no feature tensors found in {}",
            data.display()
        )));
    }
    let mut subjects: Vec<String> = by_subject.iter().map(|(s, _)| s.clone()).collect();
    subjects.sort();
    subjects.dedup();
    if subjects.len() < 2 {
        return Err(CliError::Usage(
            "training needs tensors from at least 2 subjects".into(),
        ));
    }
    let data_set: Vec<(Array3<f64>, usize)> = by_subject
        .into_iter()
        .map(|(subject, tensor)| {
            let label = subjects.binary_search(&subject).expect("built from list");
            (tensor, label)
        })
        .collect();

    let mut model = build_model::<f32>(subjects.len(), net_init_seed(cfg.seed))?;
    let train_cfg = TrainConfig {
        seed: net_train_seed(cfg.seed),
        ..cfg.train
    };
    let report = train(&mut model, &data_set, &train_cfg)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    model.save(out)?;
    println!(
        "trained on {} tensors from {} subjects ({} parameters); epoch losses: {}",
        data_set.len(),
        subjects.len(),
        model.parameter_count(),
        report
            .epoch_losses
            .iter()
            .map(|l| format!("{l:.4}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    println!("saved checkpoint to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn featurize(model_path: &Path, input: &Path, out: &Path) -> CliResult<ExitCode> {
    let model = CnnModel::<f32>::load(model_path)?;
    let extractor = FeatureExtractor::from_model(model)?;
    if extractor.is_from_untrained() {
        eprintln!("warning: the checkpoint was never trained; features will be arbitrary");
    }
    let files = if input.is_dir() {
        f32_files(input)?
    } else {
        vec![input.to_path_buf()]
    };
    fs::create_dir_all(out)?;
    let mut written = 0usize;
    for path in &files {
        let (tensor, sidecar) = read_tensor(path)?;
        if sidecar.kind != "feature_tensor" {
            continue;
        }
        let tensor = tensor
            .into_dimensionality::<ndarray::Ix3>()
            .map_err(|_| CliError::Usage(format!("{} is not a 3-d tensor", path.display())))?;
        let feature = extractor.extract(&tensor)?;
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("tensor");
        write_tensor(
            &out.join(format!("feat_{stem}.f32")),
            ndarray::aview1(&feature).into_dyn(),
            "feature",
            sidecar.subject.as_deref(),
            sidecar.trial_kind.as_deref(),
        )?;
        written += 1;
    }
    if written == 0 {
        return Err(CliError::Usage(format!(
            "no feature tensors found under {}",
            input.display()
        )));
    }
    println!(
        "extracted {} feature vectors (dim {}) to {}",
        written,
        extractor.feature_dim(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

/// Reads enrollment features: a single file holding a vector or matrix, or
/// a directory of per-trial feature vectors.
fn load_features(input: &Path) -> CliResult<Array2<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut dim = None;
    let files = if input.is_dir() {
        f32_files(input)?
    } else {
        vec![input.to_path_buf()]
    };
    for path in &files {
        let (tensor, sidecar) = read_tensor(path)?;
        if input.is_dir() && sidecar.kind != "feature" {
            continue;
        }
        match tensor.ndim() {
            1 => {
                let v = tensor.into_raw_vec_and_offset().0;
                if *dim.get_or_insert(v.len()) != v.len() {
                    return Err(CliError::Usage(format!(
                        "{} has dimension {}, expected {}",
                        path.display(),
                        v.len(),
                        dim.unwrap()
                    )));
                }
                rows.push(v);
            }
            2 => {
                let matrix = tensor.into_dimensionality::<ndarray::Ix2>().expect("ndim 2");
                for row in matrix.rows() {
                    let v = row.to_vec();
                    if *dim.get_or_insert(v.len()) != v.len() {
                        return Err(CliError::Usage(format!(
                            "{} has rows of dimension {}, expected {}",
                            path.display(),
                            v.len(),
                            dim.unwrap()
                        )));
                    }
                    rows.push(v);
                }
            }
            n => {
                return Err(CliError::Usage(format!(
                    "{} is {n}-dimensional; features must be vectors or matrices",
                    path.display()
                )));
            }
        }
    }
    let Some(dim) = dim else {
        return Err(CliError::Usage(format!(
            "no feature files found under {}",
            input.display()
        )));
    };
    let flat: Vec<f64> = rows.concat();
    Ok(Array2::from_shape_vec((flat.len() / dim, dim), flat).expect("rows share one dimension"))
}

fn enroll_user(
    opts: &ConfigOpts,
    input: &Path,
    out: &Path,
    classifier: Option<Classifier>,
) -> CliResult<ExitCode> {
    let mut cfg = resolve_config(opts, Seeding::Deterministic)?;
    if let Some(c) = classifier {
        cfg.enrollment.kind = c.into();
    }
    let features = load_features(input)?;
    let enrollment = enroll(features.view(), &cfg.enrollment)?;
    for warning in &enrollment.warnings {
        eprintln!("warning: {warning}");
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    enrollment.model.save(out)?;
    println!(
        "enrolled {} samples (dim {}) with {}; model saved to {}",
        features.nrows(),
        features.ncols(),
        cfg.enrollment.kind,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

/// Obtains the probe feature vector for `verify`, whatever form the input
/// file takes.
fn probe_feature(
    cfg: &PipelineConfig,
    input: &Path,
    extractor: Option<&Path>,
    frames: Option<usize>,
) -> CliResult<Vec<f64>> {
    let need_extractor = |what: &str| {
        CliError::Usage(format!(
            "the probe is a {what}; pass --extractor with a CNN checkpoint to featurize it"
        ))
    };
    // A tensor sidecar parses only for tensor/feature files; fall back to
    // the waveform reader for recordings.
    if let Ok((tensor, _)) = read_tensor(input) {
        return match tensor.ndim() {
            1 => Ok(tensor.into_raw_vec_and_offset().0),
            3 => {
                let path = extractor.ok_or_else(|| need_extractor("feature tensor"))?;
                let model = CnnModel::<f32>::load(path)?;
                let extractor = FeatureExtractor::from_model(model)?;
                let tensor = tensor
                    .into_dimensionality::<ndarray::Ix3>()
                    .expect("ndim checked");
                Ok(extractor.extract(&tensor)?)
            }
            n => Err(CliError::Usage(format!(
                "probe tensor is {n}-dimensional; expected a feature vector or a 3-d tensor"
            ))),
        };
    }
    let (recording, _) = read_waveform(input)?;
    let path = extractor.ok_or_else(|| need_extractor("recording"))?;
    let model = CnnModel::<f32>::load(path)?;
    let extractor = FeatureExtractor::from_model(model)?;
    let layout = FrameLayout::with_frames(frames.unwrap_or(cfg.frames_per_trial));
    let processed = preprocess_recording(&recording, &layout, &cfg.preprocess)?;
    let tensor = tensor_from_diff(&processed.diffs[0], &CropSpec::default(), cfg.norm)?;
    Ok(extractor.extract(&tensor.data)?)
}

fn verify(
    opts: &ConfigOpts,
    model_path: &Path,
    input: &Path,
    extractor: Option<&Path>,
    frames: Option<usize>,
) -> CliResult<ExitCode> {
    let cfg = resolve_config(opts, Seeding::Deterministic)?;
    let model = EnrolledModel::load(model_path)?;
    let feature = probe_feature(&cfg, input, extractor, frames)?;
    let decision = model.decide(ArrayView1::from(feature.as_slice()))?;
    if decision.accepted {
        println!("ACCEPT score={:.6}", decision.score);
        Ok(ExitCode::SUCCESS)
    } else {
        println!("REJECT score={:.6}", decision.score);
        Ok(ExitCode::from(3))
    }
}

/// Writes the study report bundle: JSON, CSV tables, and SVG plots.
fn write_report_bundle(
    out: &Path,
    cfg: &PipelineConfig,
    artifacts: &StudyArtifacts,
) -> CliResult<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
    let report = &artifacts.report;
    fs::write(out.join("report.json"), report.to_json()?)?;
    fs::write(out.join("per_user.csv"), report.per_user_csv())?;
    fs::write(out.join("attacks.csv"), report.attacks_csv())?;
    let latency_csv = report.latency_csv();
    if !latency_csv.is_empty() {
        fs::write(out.join("latency.csv"), latency_csv)?;
    }

    let roc_series: Vec<Series<'_>> = report
        .cv
        .per_user
        .iter()
        .zip(&artifacts.roc_curves)
        .map(|(eval, curve)| Series {
            label: &eval.user,
            points: &curve.points,
        })
        .collect();
    fs::write(
        out.join("roc.svg"),
        line_plot(
            "Receiver operating characteristic per user",
            "false acceptance rate",
            "true acceptance rate",
            &roc_series,
        ),
    )?;

    if !report.attacks.is_empty() {
        let kde_points: Vec<(String, Vec<(f64, f64)>)> = report
            .attacks
            .iter()
            .map(|row| {
                let pts = row
                    .kde
                    .grid
                    .iter()
                    .copied()
                    .zip(row.kde.density.iter().copied())
                    .collect();
                (row.kind.to_string(), pts)
            })
            .collect();
        let kde_series: Vec<Series<'_>> = kde_points
            .iter()
            .map(|(label, points)| Series { label, points })
            .collect();
        fs::write(
            out.join("score_kde.svg"),
            line_plot(
                "Attack score densities",
                "decision score",
                "density",
                &kde_series,
            ),
        )?;
    }
    Ok(())
}

/// Prints the headline numbers of a study report.
fn print_report_summary(report: &StudyReport) {
    println!(
        "seed {} | {} classifier | {} subjects x {} trials, {}-fold CV",
        report.seed,
        report.classifier,
        report.subjects,
        report.trials_per_subject,
        report.cv.folds
    );
    println!(
        "BAC {:.4} +- {:.4} | AUC {:.4} +- {:.4} | EER {:.4} +- {:.4}",
        report.cv.bac.mean,
        report.cv.bac.std,
        report.cv.auc.mean,
        report.cv.auc.std,
        report.cv.eer.mean,
        report.cv.eer.std
    );
    for row in &report.attacks {
        println!(
            "attack {}: {}/{} bypassed (FAR {:.4}), mean score {:.4}",
            row.kind, row.bypassed, row.attempts, row.far, row.mean_score
        );
    }
    if let Some(lat) = &report.latency {
        println!(
            "latency over {} runs: preprocess {:.2} ms, extract {:.2} ms, classify {:.3} ms (total {:.2} ms)",
            lat.runs,
            lat.preprocess_ms,
            lat.extract_ms,
            lat.classify_ms,
            lat.total_ms()
        );
    }
}

fn study(
    opts: &ConfigOpts,
    subjects: Option<usize>,
    frames: Option<usize>,
    classifier: Option<Classifier>,
    phase_wrap: Option<PhaseWrap>,
    out: &Path,
) -> CliResult<ExitCode> {
    let mut cfg = resolve_config(opts, Seeding::Stochastic)?;
    if let Some(n) = subjects {
        cfg.subjects = n;
    }
    if let Some(n) = frames {
        cfg.frames_per_trial = n;
    }
    if let Some(c) = classifier {
        cfg.enrollment.kind = c.into();
    }
    if let Some(p) = phase_wrap {
        cfg.preprocess.phase_mode = p.into();
    }
    let artifacts = run_study(&cfg)?;
    write_report_bundle(out, &cfg, &artifacts)?;
    print_report_summary(&artifacts.report);
    println!("report written to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn attack_study(
    opts: &ConfigOpts,
    subjects: Option<usize>,
    classifier: Option<Classifier>,
    out: &Path,
) -> CliResult<ExitCode> {
    let mut cfg = resolve_config(opts, Seeding::Stochastic)?;
    if let Some(n) = subjects {
        cfg.subjects = n;
    }
    if let Some(c) = classifier {
        cfg.enrollment.kind = c.into();
    }
    let artifacts = run_attack_study(&cfg)?;
    write_report_bundle(out, &cfg, &artifacts)?;
    print_report_summary(&artifacts.report);
    println!("report written to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn latency(opts: &ConfigOpts, out: Option<&Path>) -> CliResult<ExitCode> {
    let cfg = resolve_config(opts, Seeding::Stochastic)?;
    let breakdown = run_latency(&cfg)?;
    println!(
        "latency over {} runs: preprocess {:.2} ms, extract {:.2} ms, classify {:.3} ms (total {:.2} ms)",
        breakdown.runs,
        breakdown.preprocess_ms,
        breakdown.extract_ms,
        breakdown.classify_ms,
        breakdown.total_ms()
    );
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(
            dir.join("latency.json"),
            serde_json::to_string_pretty(&breakdown)?,
        )?;
        let mut csv = String::from("stage,mean_ms\n");
        let _ = writeln!(csv, "preprocess,{:.4}", breakdown.preprocess_ms);
        let _ = writeln!(csv, "feature_extraction,{:.4}", breakdown.extract_ms);
        let _ = writeln!(csv, "classification,{:.4}", breakdown.classify_ms);
        let _ = writeln!(csv, "total,{:.4}", breakdown.total_ms());
        fs::write(dir.join("latency.csv"), csv)?;
        println!("latency report written to {}", dir.display());
    }
    Ok(ExitCode::SUCCESS)
}
