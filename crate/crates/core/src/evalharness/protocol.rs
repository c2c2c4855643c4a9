//! Evaluation protocols over extracted feature vectors: per-user k-fold
//! cross-validation against an impostor pool, attack-trial aggregation, and
//! wall-clock latency measurement of the verification stages.
//!
//! Protocols operate on features, not audio, so they compose with any
//! front end. Users are evaluated independently (and in parallel); all
//! randomness is drawn from explicitly seeded generators so repeated runs
//! produce identical reports.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use super::metrics::{confusion, gaussian_kde, roc, GaussianKde, RocCurve};
use crate::error::{Error, Result};
use crate::oneclass::{enroll, EnrollmentConfig};

/// Splits a per-protocol stream of pseudo-random draws: one 64-bit state per
/// (seed, lane) pair, independent of evaluation order.
fn mix(seed: u64, lane: u64) -> u64 {
    let mut z = seed ^ lane.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Verification quality of one enrolled user under cross-validation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserEval {
    /// Label of the enrolled user.
    pub user: String,
    /// True acceptance rate at the classifier's decision threshold.
    pub tar: f64,
    /// True rejection rate at the classifier's decision threshold.
    pub trr: f64,
    /// False acceptance rate at the classifier's decision threshold.
    pub far: f64,
    /// False rejection rate at the classifier's decision threshold.
    pub frr: f64,
    /// Balanced accuracy `(TAR + TRR) / 2`.
    pub bac: f64,
    /// Threshold-independent area under the ROC curve.
    pub auc: f64,
    /// Equal error rate from the ROC sweep.
    pub eer: f64,
}

/// Mean and sample standard deviation of one metric across users.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
}

fn summarize(values: impl Iterator<Item = f64> + Clone) -> MetricSummary {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let std = if n > 1.0 {
        (values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    MetricSummary { mean, std }
}

/// Cross-validation results: one row per user plus across-user summaries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossValReport {
    /// Number of folds.
    pub folds: usize,
    /// Per-user verification quality, in input order.
    pub per_user: Vec<UserEval>,
    /// Balanced accuracy across users.
    pub bac: MetricSummary,
    /// AUC across users.
    pub auc: MetricSummary,
    /// EER across users.
    pub eer: MetricSummary,
}

/// Runs per-user k-fold cross-validation.
///
/// For each user, their samples are shuffled (seeded) and split into `folds`
/// parts; each part in turn is held out while a one-class model is enrolled
/// on the rest. Held-out genuine samples and every other user's samples are
/// scored against the fold's model, pooled over folds, and condensed into
/// threshold metrics (at the classifier's own decision threshold) plus an
/// ROC sweep.
pub fn cross_validate(
    users: &[(String, Array2<f64>)],
    folds: usize,
    cfg: &EnrollmentConfig,
    seed: u64,
) -> Result<CrossValReport> {
    Ok(cross_validate_detailed(users, folds, cfg, seed)?.0)
}

/// Like [`cross_validate`], additionally returning each user's full ROC
/// curve (in input order) for plotting.
pub fn cross_validate_detailed(
    users: &[(String, Array2<f64>)],
    folds: usize,
    cfg: &EnrollmentConfig,
    seed: u64,
) -> Result<(CrossValReport, Vec<RocCurve>)> {
    if users.len() < 2 {
        return Err(Error::InvalidParameter(
            "cross-validation needs at least two users (one enrollee plus impostors)".into(),
        ));
    }
    if folds < 2 {
        return Err(Error::InvalidParameter(format!(
            "cross-validation needs at least 2 folds, got {folds}"
        )));
    }
    for (name, feats) in users {
        if feats.nrows() < folds {
            return Err(Error::InvalidParameter(format!(
                "user {name} has {} samples, fewer than the {folds} folds",
                feats.nrows()
            )));
        }
    }

    let rows: Vec<(UserEval, RocCurve)> = users
        .par_iter()
        .enumerate()
        .map(|(u, (name, feats))| evaluate_user(u, name, feats.view(), users, folds, cfg, seed))
        .collect::<Result<_>>()?;
    let (per_user, curves): (Vec<UserEval>, Vec<RocCurve>) = rows.into_iter().unzip();

    let report = CrossValReport {
        folds,
        bac: summarize(per_user.iter().map(|e| e.bac)),
        auc: summarize(per_user.iter().map(|e| e.auc)),
        eer: summarize(per_user.iter().map(|e| e.eer)),
        per_user,
    };
    Ok((report, curves))
}

fn evaluate_user(
    u: usize,
    name: &str,
    feats: ArrayView2<f64>,
    users: &[(String, Array2<f64>)],
    folds: usize,
    cfg: &EnrollmentConfig,
    seed: u64,
) -> Result<(UserEval, RocCurve)> {
    let n = feats.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, u as u64));
    order.shuffle(&mut rng);

    // Contiguous fold boundaries over the shuffled order; the first
    // `n % folds` folds absorb the remainder.
    let base = n / folds;
    let extra = n % folds;
    let mut fold_of = vec![0usize; n];
    let mut cursor = 0;
    for f in 0..folds {
        let len = base + usize::from(f < extra);
        for &idx in &order[cursor..cursor + len] {
            fold_of[idx] = f;
        }
        cursor += len;
    }

    let mut genuine = Vec::with_capacity(n);
    let mut impostor = Vec::new();
    let mut threshold = 0.0;
    for f in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
        let mut train_rows = Array2::zeros((train.len(), feats.ncols()));
        for (r, &i) in train.iter().enumerate() {
            train_rows.row_mut(r).assign(&feats.row(i));
        }
        let model = enroll(train_rows.view(), cfg)?.model;
        threshold = model.decision_threshold();

        for i in (0..n).filter(|&i| fold_of[i] == f) {
            genuine.push(model.score(feats.row(i))?);
        }
        for (v, (_, other)) in users.iter().enumerate() {
            if v == u {
                continue;
            }
            for row in other.axis_iter(Axis(0)) {
                impostor.push(model.score(row)?);
            }
        }
    }

    let counts = confusion(&genuine, &impostor, threshold)?;
    let curve = roc(&genuine, &impostor)?;
    let eval = UserEval {
        user: name.to_string(),
        tar: counts.tar(),
        trr: counts.trr(),
        far: counts.far(),
        frr: counts.frr(),
        bac: counts.bac(),
        auc: curve.auc,
        eer: curve.eer,
    };
    Ok((eval, curve))
}

/// The kind of presentation attack a trial simulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    /// An unrelated person replays the probe against a victim's model.
    ZeroEffort,
    /// The attacker tunes their geometry toward the victim's before probing.
    Mimicry,
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttackKind::ZeroEffort => "zero_effort",
            AttackKind::Mimicry => "mimicry",
        })
    }
}

/// One attack presentation: its kind, the model's score, and the decision.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AttackTrial {
    pub kind: AttackKind,
    pub score: f64,
    pub accepted: bool,
}

/// Aggregate outcome of all trials of one attack kind.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackRow {
    pub kind: AttackKind,
    /// Number of presentations.
    pub attempts: usize,
    /// Presentations that were (wrongly) accepted.
    pub bypassed: usize,
    /// `bypassed / attempts`.
    pub far: f64,
    /// Mean decision score over the presentations.
    pub mean_score: f64,
    /// Density estimate of the score distribution, for plotting.
    pub kde: GaussianKde,
}

/// Groups attack trials by kind and summarizes each group. Kinds appear in
/// enum order; kinds with no trials are omitted.
pub fn attack_eval(trials: &[AttackTrial]) -> Result<Vec<AttackRow>> {
    let mut rows = Vec::new();
    for kind in [AttackKind::ZeroEffort, AttackKind::Mimicry] {
        let scores: Vec<f64> = trials
            .iter()
            .filter(|t| t.kind == kind)
            .map(|t| t.score)
            .collect();
        if scores.is_empty() {
            continue;
        }
        let bypassed = trials
            .iter()
            .filter(|t| t.kind == kind && t.accepted)
            .count();
        rows.push(AttackRow {
            kind,
            attempts: scores.len(),
            bypassed,
            far: bypassed as f64 / scores.len() as f64,
            mean_score: scores.iter().sum::<f64>() / scores.len() as f64,
            kde: gaussian_kde(&scores)?,
        });
    }
    Ok(rows)
}

/// Mean wall-clock cost of the three verification stages, in milliseconds.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    /// Runs averaged over.
    pub runs: usize,
    /// Denoising and tensor assembly.
    pub preprocess_ms: f64,
    /// CNN feature extraction.
    pub extract_ms: f64,
    /// One-class scoring and thresholding.
    pub classify_ms: f64,
}

impl LatencyBreakdown {
    /// Sum of the stage means.
    pub fn total_ms(&self) -> f64 {
        self.preprocess_ms + self.extract_ms + self.classify_ms
    }
}

/// Times the three verification stages over `runs` repetitions.
///
/// The stage closures run back to back in order on every repetition, so the
/// stage means also decompose the mean end-to-end wall time.
pub fn measure_latency(
    runs: usize,
    mut preprocess: impl FnMut(),
    mut extract: impl FnMut(),
    mut classify: impl FnMut(),
) -> Result<LatencyBreakdown> {
    if runs == 0 {
        return Err(Error::InvalidParameter(
            "latency measurement needs at least one run".into(),
        ));
    }
    let mut totals = [0.0f64; 3];
    for _ in 0..runs {
        let stages: [&mut dyn FnMut(); 3] = [&mut preprocess, &mut extract, &mut classify];
        for (total, stage) in totals.iter_mut().zip(stages) {
            let start = Instant::now();
            stage();
            *total += start.elapsed().as_secs_f64() * 1e3;
        }
    }
    Ok(LatencyBreakdown {
        runs,
        preprocess_ms: totals[0] / runs as f64,
        extract_ms: totals[1] / runs as f64,
        classify_ms: totals[2] / runs as f64,
    })
}
