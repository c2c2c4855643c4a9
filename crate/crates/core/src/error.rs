//! Error type shared across the crate.
//!
//! Every fallible operation returns [`Result`]. Variants are grouped by the
//! stage that raises them so callers can match on the failure class without
//! string-parsing messages.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A constructor or builder was handed a value outside its documented
    /// domain (negative length, frequency above Nyquist, ...).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The pilot preamble was not found in a recording: the best normalized
    /// correlation peak stayed below the detection threshold.
    #[error(
        "pilot not detected: best normalized correlation {best:.4} is below threshold {threshold}"
    )]
    PilotNotFound { best: f64, threshold: f64 },

    /// A recording ended before the requested number of frames; `recovered`
    /// full frames were available after the pilot.
    #[error("recording truncated: requested {requested} frames, only {recovered} are complete")]
    Truncated { requested: usize, recovered: usize },

    /// Two arrays that must agree in shape do not.
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    /// The simulated channel drove a sample past full scale. Clipping is a
    /// hard error rather than a silent saturation so that experiments never
    /// run on distorted audio.
    #[error("channel output clips: peak |sample| = {peak:.4} exceeds 1.0; reduce gains or tx amplitude")]
    Clipping { peak: f64 },

    /// Population or trial generation could not satisfy its constraints
    /// (e.g. minimum ear-to-ear separation) within the retry budget.
    #[error("generation failed: {0}")]
    Generation(String),

    /// An iterative solver hit its iteration cap before reaching its
    /// convergence tolerance.
    #[error("solver did not converge: {iterations} iterations, residual {residual:.3e} > tol {tolerance:.3e}")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        tolerance: f64,
    },

    /// A configuration file or flag combination is inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// A serialized artifact (waveform, tensor, checkpoint, enrollment
    /// model) is malformed or does not match its sidecar.
    #[error("artifact format error: {0}")]
    Format(String),

    /// Underlying filesystem failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// JSON (de)serialization failure in sidecars, configs, or reports.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
