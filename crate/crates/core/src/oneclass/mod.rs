//! One-class authentication over extracted feature vectors.
//!
//! Enrollment fits a model of the legitimate user's features — either a
//! one-class SVM ([`ocsvm`]) or a local-outlier-factor model ([`lof`]) —
//! and verification scores fresh features against it:
//!
//! - the score is the model's decision value (higher = more legitimate),
//! - a query is accepted when the score reaches the model's threshold
//!   (0 for the SVM, the negated LOF cutoff for LOF).
//!
//! An enrolled model persists as one file: an 8-byte magic, a version,
//! a JSON header with the hyperparameters, and the support vectors /
//! training points as little-endian `f32`.

pub mod lof;
pub mod ocsvm;

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use lof::{lof_fit, LofModel, DEFAULT_LOF_THRESHOLD, DEFAULT_NEIGHBORS};
pub use ocsvm::{
    kernel_matrix, ocsvm_fit, rbf_kernel, resolve_gamma, GammaMode, OcsvmConfig, OcsvmModel,
    DEFAULT_MAX_ITER, DEFAULT_NU, DEFAULT_TOLERANCE,
};

const ENROLLMENT_MAGIC: &[u8; 8] = b"EARAUTH1";
const ENROLLMENT_VERSION: u32 = 1;

/// Fewer enrollment samples than this draws a warning.
pub const MIN_COMFORTABLE_SAMPLES: usize = 10;

/// Which one-class classifier to enroll with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    #[default]
    Ocsvm,
    Lof,
}

impl std::fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ClassifierKind::Ocsvm => write!(f, "ocsvm"),
            ClassifierKind::Lof => write!(f, "lof"),
        }
    }
}

/// Everything enrollment needs besides the features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnrollmentConfig {
    pub kind: ClassifierKind,
    /// SVM outlier budget.
    pub nu: f64,
    /// SVM kernel width selection.
    pub gamma: GammaMode,
    /// SVM solver tolerance.
    pub svm_tolerance: f64,
    /// SVM solver iteration cap.
    pub svm_max_iter: usize,
    /// LOF neighborhood size.
    pub n_neighbors: usize,
    /// LOF acceptance cutoff.
    pub lof_threshold: f64,
}

impl Default for EnrollmentConfig {
    fn default() -> Self {
        Self {
            kind: ClassifierKind::Ocsvm,
            nu: DEFAULT_NU,
            gamma: GammaMode::Scale,
            svm_tolerance: DEFAULT_TOLERANCE,
            svm_max_iter: DEFAULT_MAX_ITER,
            n_neighbors: DEFAULT_NEIGHBORS,
            lof_threshold: DEFAULT_LOF_THRESHOLD,
        }
    }
}

/// The outcome of a verification attempt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuthDecision {
    /// Whether the query passed.
    pub accepted: bool,
    /// Decision value; higher = more legitimate.
    pub score: f64,
    /// The acceptance cutoff the score was compared against.
    pub threshold: f64,
}

/// A fitted authentication model of either kind.
#[derive(Debug, Clone)]
pub enum EnrolledModel {
    Ocsvm(OcsvmModel),
    Lof(LofModel),
}

/// An enrollment result: the model plus any advisory warnings (the fit
/// still succeeded).
#[derive(Debug, Clone)]
pub struct Enrollment {
    pub model: EnrolledModel,
    pub warnings: Vec<String>,
}

/// Fits a one-class model on the legitimate user's feature rows.
pub fn enroll(features: ArrayView2<f64>, cfg: &EnrollmentConfig) -> Result<Enrollment> {
    if features.nrows() == 0 {
        return Err(Error::InvalidParameter(
            "cannot enroll on an empty feature set".into(),
        ));
    }
    let mut warnings = Vec::new();
    if features.nrows() < MIN_COMFORTABLE_SAMPLES {
        warnings.push(format!(
            "only {} enrollment samples (recommended at least {}); the model may generalize poorly",
            features.nrows(),
            MIN_COMFORTABLE_SAMPLES
        ));
    }
    let model = match cfg.kind {
        ClassifierKind::Ocsvm => {
            let svm_cfg = OcsvmConfig {
                nu: cfg.nu,
                gamma: cfg.gamma,
                tolerance: cfg.svm_tolerance,
                max_iter: cfg.svm_max_iter,
            };
            EnrolledModel::Ocsvm(ocsvm_fit(features, &svm_cfg)?)
        }
        ClassifierKind::Lof => {
            EnrolledModel::Lof(lof_fit(features, cfg.n_neighbors, cfg.lof_threshold)?)
        }
    };
    Ok(Enrollment { model, warnings })
}

impl EnrolledModel {
    /// Which classifier this is.
    pub fn kind(&self) -> ClassifierKind {
        match self {
            EnrolledModel::Ocsvm(_) => ClassifierKind::Ocsvm,
            EnrolledModel::Lof(_) => ClassifierKind::Lof,
        }
    }

    /// Feature dimensionality the model expects.
    pub fn feature_dim(&self) -> usize {
        match self {
            EnrolledModel::Ocsvm(m) => m.feature_dim(),
            EnrolledModel::Lof(m) => m.feature_dim(),
        }
    }

    /// The acceptance cutoff scores are compared against.
    pub fn decision_threshold(&self) -> f64 {
        match self {
            EnrolledModel::Ocsvm(_) => 0.0,
            EnrolledModel::Lof(m) => -m.threshold(),
        }
    }

    /// Decision score of a query (higher = more legitimate).
    pub fn score(&self, x: ArrayView1<f64>) -> Result<f64> {
        if x.len() != self.feature_dim() {
            return Err(Error::ShapeMismatch {
                expected: format!("feature vector of length {}", self.feature_dim()),
                actual: format!("length {}", x.len()),
            });
        }
        Ok(match self {
            EnrolledModel::Ocsvm(m) => m.decision(x),
            EnrolledModel::Lof(m) => m.score(x),
        })
    }

    /// Scores a query and applies the acceptance rule.
    pub fn decide(&self, x: ArrayView1<f64>) -> Result<AuthDecision> {
        let score = self.score(x)?;
        let threshold = self.decision_threshold();
        Ok(AuthDecision {
            accepted: score >= threshold,
            score,
            threshold,
        })
    }
}

// --- Persistence ------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum EnrollHeader {
    Ocsvm {
        feature_dim: usize,
        n_support: usize,
        rho: f64,
        gamma: f64,
        nu: f64,
    },
    Lof {
        feature_dim: usize,
        n_points: usize,
        n_neighbors: usize,
        threshold: f64,
    },
}

fn push_f32s(bytes: &mut Vec<u8>, values: impl Iterator<Item = f64>) {
    for v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn read_f32s(blob: &[u8]) -> Vec<f64> {
    blob.chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect()
}

impl EnrolledModel {
    /// Writes the model to one self-contained file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let (header, blob_values): (EnrollHeader, Vec<f64>) = match self {
            EnrolledModel::Ocsvm(m) => {
                let mut values: Vec<f64> = m.alphas().iter().copied().collect();
                values.extend(m.support_vectors().iter().copied());
                (
                    EnrollHeader::Ocsvm {
                        feature_dim: m.feature_dim(),
                        n_support: m.n_support(),
                        rho: m.rho(),
                        gamma: m.gamma(),
                        nu: m.nu(),
                    },
                    values,
                )
            }
            EnrolledModel::Lof(m) => (
                EnrollHeader::Lof {
                    feature_dim: m.feature_dim(),
                    n_points: m.points().nrows(),
                    n_neighbors: m.k(),
                    threshold: m.threshold(),
                },
                m.points().iter().copied().collect(),
            ),
        };
        let header_bytes = serde_json::to_vec(&header)?;
        let mut bytes = Vec::new();
        bytes.extend_from_slice(ENROLLMENT_MAGIC);
        bytes.extend_from_slice(&ENROLLMENT_VERSION.to_le_bytes());
        bytes.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&header_bytes);
        push_f32s(&mut bytes, blob_values.into_iter());
        std::fs::write(path, bytes)?;
        Ok(())
    }

    /// Reads a model saved by [`Self::save`].
    pub fn load(path: &Path) -> Result<EnrolledModel> {
        let bytes = std::fs::read(path)?;
        let fail = |msg: &str| Error::Format(format!("{}: {msg}", path.display()));
        if bytes.len() < 16 || &bytes[..8] != ENROLLMENT_MAGIC {
            return Err(fail("not an enrollment model (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != ENROLLMENT_VERSION {
            return Err(fail(&format!("unsupported model version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        if bytes.len() < 16 + hlen {
            return Err(fail("truncated header"));
        }
        let header: EnrollHeader = serde_json::from_slice(&bytes[16..16 + hlen])?;
        let values = read_f32s(&bytes[16 + hlen..]);
        match header {
            EnrollHeader::Ocsvm {
                feature_dim,
                n_support,
                rho,
                gamma,
                nu,
            } => {
                let expect = n_support + n_support * feature_dim;
                if values.len() != expect {
                    return Err(fail(&format!(
                        "float block holds {} values, header needs {expect}",
                        values.len()
                    )));
                }
                let alphas = Array1::from_vec(values[..n_support].to_vec());
                let svs =
                    Array2::from_shape_vec((n_support, feature_dim), values[n_support..].to_vec())
                        .expect("length checked above");
                Ok(EnrolledModel::Ocsvm(OcsvmModel::from_parts(
                    svs, alphas, rho, gamma, nu,
                )?))
            }
            EnrollHeader::Lof {
                feature_dim,
                n_points,
                n_neighbors,
                threshold,
            } => {
                let expect = n_points * feature_dim;
                if values.len() != expect {
                    return Err(fail(&format!(
                        "float block holds {} values, header needs {expect}",
                        values.len()
                    )));
                }
                let points = Array2::from_shape_vec((n_points, feature_dim), values)
                    .expect("length checked above");
                // Neighborhood statistics are derived, so refit them from
                // the (f32-rounded) points.
                Ok(EnrolledModel::Lof(lof_fit(
                    points.view(),
                    n_neighbors,
                    threshold,
                )?))
            }
        }
    }
}
