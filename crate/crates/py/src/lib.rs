//! Python bindings for the ear-echo authentication pipeline.
//!
//! The module mirrors the library's main operations with plain-Python
//! types: waveforms and feature vectors travel as `list[float]`, tensors
//! as flat row-major `list[float]` with shape `(65, 158, 2)`, and study
//! reports as JSON strings.
//!
//! - signal generation: [`sensing_sequence`], [`chirp`]
//! - synthetic channel: [`Population`] (render recordings and tensors)
//! - preprocessing: [`recording_to_tensor`]
//! - feature extraction: [`Extractor`] (train / save / load / extract),
//!   [`cnn_parameter_count`], [`cnn_layer_summary`]
//! - one-class verification: [`Enrolled`] (enroll / score / decide)
//! - evaluation: [`roc_metrics`], [`balanced_accuracy`], [`run_study`]

use ndarray::{Array2, Array3, ArrayView1};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use scrauth_core::earsim::{generate_population, EnvironmentSpec, PopulationSpec, Subject};
use scrauth_core::evalharness::{confusion, roc};
use scrauth_core::neuralnet::{
    build_model, train, CnnModel, FeatureExtractor, TrainConfig, INPUT_SHAPE,
};
use scrauth_core::oneclass::{enroll, ClassifierKind, EnrolledModel, EnrollmentConfig};
use scrauth_core::pipeline::{self, PipelineConfig};
use scrauth_core::preprocess::{preprocess_recording, PreprocessConfig};
use scrauth_core::signals::{
    assemble_sensing_sequence, generate_chirp, ChirpSpec, FrameLayout, SensingWaveform,
    SAMPLE_RATE,
};
use scrauth_core::spectro::{tensor_from_diff, CropSpec, NormMode};

/// Maps library errors onto `ValueError`.
fn value_err(e: scrauth_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Flattens a row-major tensor into a Python list.
fn tensor_to_list(t: &Array3<f64>) -> Vec<f64> {
    t.iter().copied().collect()
}

/// Rebuilds a `(65, 158, 2)` tensor from a flat row-major list.
fn tensor_from_list(flat: Vec<f64>) -> PyResult<Array3<f64>> {
    let (h, w, c) = INPUT_SHAPE;
    if flat.len() != h * w * c {
        return Err(PyValueError::new_err(format!(
            "tensor must have {} values ({h}x{w}x{c}), got {}",
            h * w * c,
            flat.len()
        )));
    }
    Array3::from_shape_vec((h, w, c), flat)
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

fn rows_to_matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    if rows.is_empty() {
        return Err(PyValueError::new_err("need at least one feature vector"));
    }
    let dim = rows[0].len();
    if rows.iter().any(|r| r.len() != dim) {
        return Err(PyValueError::new_err(
            "all feature vectors must share one dimension",
        ));
    }
    let flat: Vec<f64> = rows.concat();
    Ok(Array2::from_shape_vec((flat.len() / dim, dim), flat).expect("validated shape"))
}

/// The transmit sensing sequence (pilot plus `frames` chirp frames) at
/// 48 kHz.
#[pyfunction]
fn sensing_sequence(frames: usize) -> PyResult<Vec<f64>> {
    let layout = FrameLayout::with_frames(frames);
    Ok(assemble_sensing_sequence(&layout)
        .map_err(value_err)?
        .samples)
}

/// One bare sensing chirp (1200 samples, 17-23 kHz sweep).
#[pyfunction]
fn chirp() -> PyResult<Vec<f64>> {
    Ok(generate_chirp(&ChirpSpec::sensing_default())
        .map_err(value_err)?
        .samples)
}

/// The audio sample rate all waveforms use, in Hz.
#[pyfunction]
fn sample_rate() -> u32 {
    SAMPLE_RATE
}

/// Trainable parameter count of the classification network for the given
/// class count (158,526 for 30 classes).
#[pyfunction]
fn cnn_parameter_count(classes: usize) -> PyResult<usize> {
    Ok(build_model::<f32>(classes, 0)
        .map_err(value_err)?
        .parameter_count())
}

/// One human-readable line per network layer.
#[pyfunction]
fn cnn_layer_summary(classes: usize) -> PyResult<Vec<String>> {
    Ok(build_model::<f32>(classes, 0).map_err(value_err)?.describe())
}

/// Runs the receive chain on a raw recording: pilot sync, bandpass,
/// per-frame alignment and reference subtraction. Returns one flat
/// `(65, 158, 2)` tensor per non-reference frame.
#[pyfunction]
#[pyo3(signature = (samples, frames=2))]
fn recording_to_tensor(samples: Vec<f64>, frames: usize) -> PyResult<Vec<Vec<f64>>> {
    let layout = FrameLayout::with_frames(frames);
    let recording = SensingWaveform::new(samples, SAMPLE_RATE);
    let processed = preprocess_recording(&recording, &layout, &PreprocessConfig::default())
        .map_err(value_err)?;
    processed
        .diffs
        .iter()
        .map(|diff| {
            tensor_from_diff(diff, &CropSpec::default(), NormMode::Joint)
                .map(|t| tensor_to_list(&t.data))
                .map_err(value_err)
        })
        .collect()
}

/// Area under the ROC curve and the equal error rate for genuine and
/// impostor score samples (higher scores mean "more genuine").
#[pyfunction]
fn roc_metrics(genuine: Vec<f64>, impostor: Vec<f64>) -> PyResult<(f64, f64)> {
    let curve = roc(&genuine, &impostor).map_err(value_err)?;
    Ok((curve.auc, curve.eer))
}

/// Balanced accuracy at a fixed acceptance threshold
/// (accept iff score >= threshold).
#[pyfunction]
#[pyo3(signature = (genuine, impostor, threshold=0.0))]
fn balanced_accuracy(genuine: Vec<f64>, impostor: Vec<f64>, threshold: f64) -> PyResult<f64> {
    let counts = confusion(&genuine, &impostor, threshold).map_err(value_err)?;
    Ok(counts.bac())
}

/// Runs the full synthetic verification study from a JSON configuration
/// (any subset of the config keys; the rest take defaults) and returns the
/// report as a JSON string.
#[pyfunction]
fn run_study(config_json: &str) -> PyResult<String> {
    let cfg: PipelineConfig =
        serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let artifacts = pipeline::run_study(&cfg).map_err(value_err)?;
    artifacts.report.to_json().map_err(value_err)
}

/// A deterministic population of synthetic subjects with distinct ears.
#[pyclass]
struct Population {
    subjects: Vec<Subject>,
    env: EnvironmentSpec,
}

#[pymethods]
impl Population {
    #[new]
    #[pyo3(signature = (n_subjects, seed=0))]
    fn new(n_subjects: usize, seed: u64) -> PyResult<Self> {
        let spec = PopulationSpec {
            n_subjects,
            ..PopulationSpec::default()
        };
        Ok(Self {
            subjects: generate_population(&spec, seed).map_err(value_err)?,
            env: EnvironmentSpec::default(),
        })
    }

    /// Subject identifiers, in order.
    fn subject_ids(&self) -> Vec<String> {
        self.subjects.iter().map(|s| s.id.clone()).collect()
    }

    fn __len__(&self) -> usize {
        self.subjects.len()
    }

    /// Renders one trial recording for a subject: the transmit sequence
    /// through that subject's ear/placement/noise channel, ear present
    /// from frame 1 (frame 0 is the off-ear reference).
    #[pyo3(signature = (subject, frames=2, seed=0))]
    fn render(&self, subject: usize, frames: usize, seed: u64) -> PyResult<Vec<f64>> {
        let s = self
            .subjects
            .get(subject)
            .ok_or_else(|| PyValueError::new_err(format!("no subject {subject}")))?;
        let layout = FrameLayout::with_frames(frames);
        let tx = assemble_sensing_sequence(&layout).map_err(value_err)?;
        Ok(
            scrauth_core::earsim::render_trial(&tx, &layout, s, &self.env, 1, seed)
                .map_err(value_err)?
                .samples,
        )
    }

    /// Renders one trial and preprocesses it straight into a flat
    /// `(65, 158, 2)` feature tensor.
    #[pyo3(signature = (subject, seed=0))]
    fn render_tensor(&self, subject: usize, seed: u64) -> PyResult<Vec<f64>> {
        let s = self
            .subjects
            .get(subject)
            .ok_or_else(|| PyValueError::new_err(format!("no subject {subject}")))?;
        let layout = FrameLayout::with_frames(2);
        let tx = assemble_sensing_sequence(&layout).map_err(value_err)?;
        let tensor = pipeline::render_trial_tensor(
            &tx,
            &layout,
            s,
            &self.env,
            &PreprocessConfig::default(),
            NormMode::Joint,
            seed,
        )
        .map_err(value_err)?;
        Ok(tensor_to_list(&tensor))
    }
}

/// The trained feature extractor: the classification network with its
/// head removed, emitting 128-d embeddings.
#[pyclass]
struct Extractor {
    inner: FeatureExtractor<f32>,
}

#[pymethods]
impl Extractor {
    /// Trains the network on labelled tensors and keeps the embedding
    /// layers. `tensors` are flat `(65, 158, 2)` lists; `labels` are class
    /// indices `0..n_classes`.
    #[staticmethod]
    #[pyo3(signature = (tensors, labels, epochs=10, batch_size=50, learning_rate=1e-3, seed=0))]
    fn train(
        tensors: Vec<Vec<f64>>,
        labels: Vec<usize>,
        epochs: usize,
        batch_size: usize,
        learning_rate: f64,
        seed: u64,
    ) -> PyResult<(Self, Vec<f64>)> {
        if tensors.len() != labels.len() {
            return Err(PyValueError::new_err(format!(
                "{} tensors but {} labels",
                tensors.len(),
                labels.len()
            )));
        }
        let n_classes = labels.iter().max().map_or(0, |m| m + 1);
        let data: Vec<(Array3<f64>, usize)> = tensors
            .into_iter()
            .zip(labels)
            .map(|(flat, label)| Ok((tensor_from_list(flat)?, label)))
            .collect::<PyResult<_>>()?;
        let mut model =
            build_model::<f32>(n_classes, pipeline::net_init_seed(seed)).map_err(value_err)?;
        let cfg = TrainConfig {
            epochs,
            batch_size,
            learning_rate,
            seed: pipeline::net_train_seed(seed),
            ..TrainConfig::default()
        };
        let report = train(&mut model, &data, &cfg).map_err(value_err)?;
        let inner = FeatureExtractor::from_model(model).map_err(value_err)?;
        Ok((Self { inner }, report.epoch_losses))
    }

    /// Loads a checkpoint written by `save` (or the command-line tool).
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let model = CnnModel::<f32>::load(path.as_ref())
            .map_err(|e| PyIOError::new_err(e.to_string()))?;
        Ok(Self {
            inner: FeatureExtractor::from_model(model).map_err(value_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner
            .model()
            .save(path.as_ref())
            .map_err(|e| PyIOError::new_err(e.to_string()))
    }

    /// Embedding dimension (128).
    fn feature_dim(&self) -> usize {
        self.inner.feature_dim()
    }

    /// False when the checkpoint was never trained.
    fn is_trained(&self) -> bool {
        !self.inner.is_from_untrained()
    }

    /// 128-d embedding of one flat `(65, 158, 2)` tensor.
    fn extract(&self, tensor: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner
            .extract(&tensor_from_list(tensor)?)
            .map_err(value_err)
    }

    /// Embeddings for a batch of flat tensors.
    fn extract_batch(&self, tensors: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        tensors.into_iter().map(|t| self.extract(t)).collect()
    }
}

/// A user's enrolled one-class model (one-class SVM or local outlier
/// factor over their feature vectors).
#[pyclass]
struct Enrolled {
    inner: EnrolledModel,
    warnings: Vec<String>,
}

#[pymethods]
impl Enrolled {
    /// Enrolls on the user's feature vectors. `kind` is `"ocsvm"` or
    /// `"lof"`.
    #[staticmethod]
    #[pyo3(signature = (features, kind="ocsvm"))]
    fn enroll(features: Vec<Vec<f64>>, kind: &str) -> PyResult<Self> {
        let kind = match kind {
            "ocsvm" => ClassifierKind::Ocsvm,
            "lof" => ClassifierKind::Lof,
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown classifier {other:?}; expected \"ocsvm\" or \"lof\""
                )))
            }
        };
        let cfg = EnrollmentConfig {
            kind,
            ..EnrollmentConfig::default()
        };
        let matrix = rows_to_matrix(features)?;
        let enrollment = enroll(matrix.view(), &cfg).map_err(value_err)?;
        Ok(Self {
            inner: enrollment.model,
            warnings: enrollment.warnings,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: EnrolledModel::load(path.as_ref())
                .map_err(|e| PyIOError::new_err(e.to_string()))?,
            warnings: Vec::new(),
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner
            .save(path.as_ref())
            .map_err(|e| PyIOError::new_err(e.to_string()))
    }

    /// Enrollment warnings (e.g. too few samples), if any.
    fn warnings(&self) -> Vec<String> {
        self.warnings.clone()
    }

    /// `"ocsvm"` or `"lof"`.
    fn kind(&self) -> String {
        self.inner.kind().to_string()
    }

    /// Scores above this are accepted.
    fn threshold(&self) -> f64 {
        self.inner.decision_threshold()
    }

    /// Decision score of a probe feature vector (higher is more genuine).
    fn score(&self, feature: Vec<f64>) -> PyResult<f64> {
        self.inner
            .score(ArrayView1::from(feature.as_slice()))
            .map_err(value_err)
    }

    /// `(accepted, score)` for a probe feature vector.
    fn decide(&self, feature: Vec<f64>) -> PyResult<(bool, f64)> {
        let d = self
            .inner
            .decide(ArrayView1::from(feature.as_slice()))
            .map_err(value_err)?;
        Ok((d.accepted, d.score))
    }
}

#[pymodule]
fn scrauth_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(sensing_sequence, m)?)?;
    m.add_function(wrap_pyfunction!(chirp, m)?)?;
    m.add_function(wrap_pyfunction!(sample_rate, m)?)?;
    m.add_function(wrap_pyfunction!(cnn_parameter_count, m)?)?;
    m.add_function(wrap_pyfunction!(cnn_layer_summary, m)?)?;
    m.add_function(wrap_pyfunction!(recording_to_tensor, m)?)?;
    m.add_function(wrap_pyfunction!(roc_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(balanced_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(run_study, m)?)?;
    m.add_class::<Population>()?;
    m.add_class::<Extractor>()?;
    m.add_class::<Enrolled>()?;
    m.add("TENSOR_SHAPE", INPUT_SHAPE)?;
    m.add("FEATURE_DIM", scrauth_core::neuralnet::FEATURE_DIM)?;
    Ok(())
}
