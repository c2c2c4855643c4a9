//! One-class support vector machine with an RBF kernel, fitted by
//! pairwise working-set optimization of the dual problem.
//!
//! The dual is
//!
//! ```text
//! minimize    1/2 alpha' Q alpha
//! subject to  0 <= alpha_i <= 1/(nu * n),   sum alpha_i = 1
//! ```
//!
//! with `Q_ij = k(x_i, x_j)` and `k(x, y) = exp(-gamma * |x - y|^2)`. The
//! solver repeatedly picks the maximal-violating pair of coefficients and
//! moves mass between them (the equality constraint keeps the sum fixed),
//! maintaining the gradient incrementally, until the KKT violation drops
//! below tolerance. The decision function is
//!
//! ```text
//! f(x) = sum_i alpha_i k(x_i, x) - rho
//! ```
//!
//! and a query is accepted when `f(x) >= 0`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default rejection budget: the expected fraction of training points
/// treated as outliers.
pub const DEFAULT_NU: f64 = 0.01;

/// Default solver tolerance on the KKT violation.
pub const DEFAULT_TOLERANCE: f64 = 1e-6;

/// Default cap on solver iterations.
pub const DEFAULT_MAX_ITER: usize = 200_000;

/// How the RBF kernel width is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GammaRepr", into = "GammaRepr")]
pub enum GammaMode {
    /// `gamma = 1 / (d * var)` where `var` is the variance of all feature
    /// entries pooled together (a degenerate zero-variance set falls back
    /// to `gamma = 1`).
    Scale,
    /// A fixed positive width.
    Explicit(f64),
}

/// JSON face of [`GammaMode`]: the string `"scale"` or a bare number.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum GammaRepr {
    Name(String),
    Value(f64),
}

impl From<GammaMode> for GammaRepr {
    fn from(mode: GammaMode) -> Self {
        match mode {
            GammaMode::Scale => GammaRepr::Name("scale".into()),
            GammaMode::Explicit(v) => GammaRepr::Value(v),
        }
    }
}

impl TryFrom<GammaRepr> for GammaMode {
    type Error = String;

    fn try_from(repr: GammaRepr) -> std::result::Result<Self, String> {
        match repr {
            GammaRepr::Name(s) if s == "scale" => Ok(GammaMode::Scale),
            GammaRepr::Name(s) => Err(format!("unknown gamma mode {s:?}")),
            GammaRepr::Value(v) => Ok(GammaMode::Explicit(v)),
        }
    }
}

impl Default for GammaMode {
    fn default() -> Self {
        GammaMode::Scale
    }
}

/// Fit hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcsvmConfig {
    /// Outlier budget in `(0, 1]`.
    pub nu: f64,
    /// Kernel width selection.
    pub gamma: GammaMode,
    /// KKT violation tolerance.
    pub tolerance: f64,
    /// Iteration cap; exceeding it is a hard error.
    pub max_iter: usize,
}

impl Default for OcsvmConfig {
    fn default() -> Self {
        Self {
            nu: DEFAULT_NU,
            gamma: GammaMode::Scale,
            tolerance: DEFAULT_TOLERANCE,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// A fitted one-class SVM: only the support vectors (nonzero dual
/// coefficients) are retained.
#[derive(Debug, Clone)]
pub struct OcsvmModel {
    support_vectors: Array2<f64>,
    alphas: Array1<f64>,
    rho: f64,
    gamma: f64,
    nu: f64,
}

/// Squared Euclidean distance.
fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// The RBF kernel `exp(-gamma * |a - b|^2)`.
pub fn rbf_kernel(a: ArrayView1<f64>, b: ArrayView1<f64>, gamma: f64) -> f64 {
    (-gamma * sq_dist(a, b)).exp()
}

/// Full kernel (Gram) matrix of a feature set.
pub fn kernel_matrix(features: ArrayView2<f64>, gamma: f64) -> Array2<f64> {
    let n = features.nrows();
    let mut q = Array2::zeros((n, n));
    for i in 0..n {
        q[(i, i)] = 1.0;
        for j in 0..i {
            let k = rbf_kernel(features.row(i), features.row(j), gamma);
            q[(i, j)] = k;
            q[(j, i)] = k;
        }
    }
    q
}

/// Resolves a [`GammaMode`] against the training features.
pub fn resolve_gamma(features: ArrayView2<f64>, mode: GammaMode) -> Result<f64> {
    match mode {
        GammaMode::Explicit(v) => {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "gamma must be a positive finite number, got {v}"
                )));
            }
            Ok(v)
        }
        GammaMode::Scale => {
            let n = features.len() as f64;
            let mean = features.iter().sum::<f64>() / n;
            let var = features.iter().map(|&v| (v - mean).powi(2)).sum::<f64>() / n;
            if var <= 0.0 {
                Ok(1.0)
            } else {
                Ok(1.0 / (features.ncols() as f64 * var))
            }
        }
    }
}

/// Fits the one-class SVM on the rows of `features`.
pub fn ocsvm_fit(features: ArrayView2<f64>, cfg: &OcsvmConfig) -> Result<OcsvmModel> {
    let n = features.nrows();
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "one-class SVM needs at least 2 training points, got {n}"
        )));
    }
    if !(cfg.nu > 0.0 && cfg.nu <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "nu must lie in (0, 1], got {}",
            cfg.nu
        )));
    }
    if !(cfg.tolerance > 0.0) {
        return Err(Error::InvalidParameter("tolerance must be positive".into()));
    }
    let gamma = resolve_gamma(features, cfg.gamma)?;
    let q = kernel_matrix(features, gamma);
    let c = 1.0 / (cfg.nu * n as f64);

    // Feasible uniform start (1/n <= C because nu <= 1), and its gradient.
    let mut alpha = Array1::from_elem(n, 1.0 / n as f64);
    let mut grad = q.dot(&alpha);

    let eps = 1e-12 * c;
    let mut iterations = 0usize;
    let violation = loop {
        // Maximal violating pair: the coefficient with the smallest
        // gradient that can still grow, and the one with the largest
        // gradient that can still shrink.
        let mut i_up: Option<usize> = None;
        let mut j_dn: Option<usize> = None;
        for t in 0..n {
            if alpha[t] < c - eps && i_up.is_none_or(|i| grad[t] < grad[i]) {
                i_up = Some(t);
            }
            if alpha[t] > eps && j_dn.is_none_or(|j| grad[t] > grad[j]) {
                j_dn = Some(t);
            }
        }
        let (i, j) = match (i_up, j_dn) {
            (Some(i), Some(j)) => (i, j),
            // Every coefficient pinned to the same bound: nothing movable.
            _ => break 0.0,
        };
        let violation = grad[j] - grad[i];
        if violation <= cfg.tolerance {
            break violation;
        }
        if iterations >= cfg.max_iter {
            return Err(Error::NonConvergence {
                iterations,
                residual: violation,
                tolerance: cfg.tolerance,
            });
        }
        iterations += 1;

        // Unconstrained optimal step along e_i - e_j, clipped to the box.
        let quad = (q[(i, i)] + q[(j, j)] - 2.0 * q[(i, j)]).max(1e-12);
        let step = (violation / quad).min(c - alpha[i]).min(alpha[j]);
        alpha[i] += step;
        alpha[j] -= step;
        for t in 0..n {
            grad[t] += step * (q[(t, i)] - q[(t, j)]);
        }
    };
    let _ = violation;

    // rho makes f vanish on free support vectors: average their gradients;
    // with no free vector, take the midpoint of the KKT-feasible interval.
    let free: Vec<usize> = (0..n)
        .filter(|&t| alpha[t] > eps && alpha[t] < c - eps)
        .collect();
    let rho = if !free.is_empty() {
        free.iter().map(|&t| grad[t]).sum::<f64>() / free.len() as f64
    } else {
        let upper_bound_max = (0..n)
            .filter(|&t| alpha[t] >= c - eps)
            .map(|t| grad[t])
            .fold(f64::NEG_INFINITY, f64::max);
        let zero_min = (0..n)
            .filter(|&t| alpha[t] <= eps)
            .map(|t| grad[t])
            .fold(f64::INFINITY, f64::min);
        match (upper_bound_max.is_finite(), zero_min.is_finite()) {
            (true, true) => 0.5 * (upper_bound_max + zero_min),
            (true, false) => upper_bound_max,
            (false, true) => zero_min,
            (false, false) => unreachable!("alphas sum to 1, some index is active"),
        }
    };

    // Keep only support vectors.
    let sv_idx: Vec<usize> = (0..n).filter(|&t| alpha[t] > eps).collect();
    let mut support_vectors = Array2::zeros((sv_idx.len(), features.ncols()));
    let mut alphas = Array1::zeros(sv_idx.len());
    for (row, &t) in sv_idx.iter().enumerate() {
        support_vectors.row_mut(row).assign(&features.row(t));
        alphas[row] = alpha[t];
    }
    Ok(OcsvmModel {
        support_vectors,
        alphas,
        rho,
        gamma,
        nu: cfg.nu,
    })
}

impl OcsvmModel {
    /// Reassembles a model from persisted parts.
    pub fn from_parts(
        support_vectors: Array2<f64>,
        alphas: Array1<f64>,
        rho: f64,
        gamma: f64,
        nu: f64,
    ) -> Result<Self> {
        if support_vectors.nrows() != alphas.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} dual coefficients", support_vectors.nrows()),
                actual: format!("{}", alphas.len()),
            });
        }
        if support_vectors.nrows() == 0 {
            return Err(Error::InvalidParameter("model has no support vectors".into()));
        }
        if alphas.iter().any(|&a| !(a >= 0.0) || !a.is_finite()) {
            return Err(Error::InvalidParameter(
                "dual coefficients must be finite and nonnegative".into(),
            ));
        }
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidParameter(format!("bad gamma {gamma}")));
        }
        Ok(Self {
            support_vectors,
            alphas,
            rho,
            gamma,
            nu,
        })
    }

    /// Decision-function value `f(x)`; the query is accepted when it is
    /// nonnegative. Panics if the query dimension differs from training.
    pub fn decision(&self, x: ArrayView1<f64>) -> f64 {
        assert_eq!(
            x.len(),
            self.feature_dim(),
            "query dimension must match the training features"
        );
        let mut acc = 0.0;
        for (sv, &a) in self.support_vectors.rows().into_iter().zip(self.alphas.iter()) {
            acc += a * rbf_kernel(sv, x, self.gamma);
        }
        acc - self.rho
    }

    /// Number of support vectors.
    pub fn n_support(&self) -> usize {
        self.support_vectors.nrows()
    }

    /// Dimensionality of the feature space.
    pub fn feature_dim(&self) -> usize {
        self.support_vectors.ncols()
    }

    /// The support vectors, one per row.
    pub fn support_vectors(&self) -> ArrayView2<'_, f64> {
        self.support_vectors.view()
    }

    /// Dual coefficients aligned with [`Self::support_vectors`].
    pub fn alphas(&self) -> ArrayView1<'_, f64> {
        self.alphas.view()
    }

    /// Decision offset.
    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Kernel width actually used.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Outlier budget the model was fitted with.
    pub fn nu(&self) -> f64 {
        self.nu
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_features(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
    }

    /// Independent reference solver: projected gradient descent on the
    /// dual, with an exact bisection projection onto the feasible set
    /// (box intersected with the simplex).
    fn pgd_reference(q: &Array2<f64>, c: f64, steps: usize) -> Array1<f64> {
        let n = q.nrows();
        let project = |v: &Array1<f64>| -> Array1<f64> {
            // alpha(theta) = clip(v - theta, 0, C); sum is decreasing in
            // theta, so bisect for sum == 1.
            let mut lo = v.iter().cloned().fold(f64::INFINITY, f64::min) - c - 1.0;
            let mut hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1.0;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let sum: f64 = v.iter().map(|&x| (x - mid).clamp(0.0, c)).sum();
                if sum > 1.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let theta = 0.5 * (lo + hi);
            v.mapv(|x| (x - theta).clamp(0.0, c))
        };
        let mut alpha = project(&Array1::from_elem(n, 1.0 / n as f64));
        let lr = 1.0 / n as f64;
        for _ in 0..steps {
            let grad = q.dot(&alpha);
            alpha = project(&(&alpha - &(grad * lr)));
        }
        alpha
    }

    fn dual_objective(q: &Array2<f64>, alpha: &Array1<f64>) -> f64 {
        0.5 * alpha.dot(&q.dot(alpha))
    }

    #[test]
    fn kernel_is_symmetric_positive_and_bounded() {
        let x = random_features(10, 4, 1);
        for i in 0..10 {
            for j in 0..10 {
                let a = rbf_kernel(x.row(i), x.row(j), 0.7);
                let b = rbf_kernel(x.row(j), x.row(i), 0.7);
                assert_eq!(a, b, "kernel must be symmetric");
                assert!(a > 0.0 && a <= 1.0, "kernel out of (0, 1]: {a}");
            }
        }
        assert_eq!(rbf_kernel(x.row(3), x.row(3), 0.7), 1.0);
    }

    #[test]
    fn gamma_scale_is_inverse_total_variance() {
        // Entries {0, 2} in equal number: pooled variance 1, d = 2.
        let x = Array2::from_shape_vec((2, 2), vec![0.0, 2.0, 2.0, 0.0]).unwrap();
        let g = resolve_gamma(x.view(), GammaMode::Scale).unwrap();
        assert!((g - 0.5).abs() < 1e-12, "got {g}");
        // Constant features degrade to gamma = 1.
        let flat = Array2::from_elem((4, 3), 2.5);
        assert_eq!(resolve_gamma(flat.view(), GammaMode::Scale).unwrap(), 1.0);
        // Explicit values pass through, bad ones are rejected.
        assert_eq!(
            resolve_gamma(x.view(), GammaMode::Explicit(0.3)).unwrap(),
            0.3
        );
        assert!(resolve_gamma(x.view(), GammaMode::Explicit(-1.0)).is_err());
    }

    #[test]
    fn fitted_alphas_satisfy_the_dual_constraints() {
        let x = random_features(30, 3, 2);
        let cfg = OcsvmConfig {
            nu: 0.2,
            ..OcsvmConfig::default()
        };
        let model = ocsvm_fit(x.view(), &cfg).unwrap();
        let c = 1.0 / (0.2 * 30.0);
        let sum: f64 = model.alphas().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9, "alphas sum to {sum}");
        for &a in model.alphas() {
            assert!(a > 0.0 && a <= c + 1e-12, "alpha {a} outside (0, C]");
        }
    }

    #[test]
    fn free_support_vectors_sit_on_the_margin() {
        let x = random_features(40, 3, 3);
        let cfg = OcsvmConfig {
            nu: 0.3,
            ..OcsvmConfig::default()
        };
        let model = ocsvm_fit(x.view(), &cfg).unwrap();
        let c = 1.0 / (0.3 * 40.0);
        let mut checked = 0;
        for (sv, &a) in model
            .support_vectors()
            .rows()
            .into_iter()
            .zip(model.alphas())
        {
            if a > 1e-8 && a < c - 1e-8 {
                let f = model.decision(sv);
                assert!(f.abs() < 1e-5, "free support vector has |f| = {}", f.abs());
                checked += 1;
            }
        }
        assert!(checked > 0, "expected at least one free support vector");
    }

    #[test]
    fn distant_queries_are_rejected_with_score_near_minus_rho() {
        let x = random_features(25, 3, 4);
        let model = ocsvm_fit(x.view(), &OcsvmConfig::default()).unwrap();
        let far = Array1::from_elem(3, 1e3);
        let f = model.decision(far.view());
        assert!(f < 0.0, "distant query must be rejected, got {f}");
        assert!(
            (f + model.rho()).abs() < 1e-9,
            "kernel terms should vanish at distance"
        );
    }

    #[test]
    fn identical_training_points_are_all_accepted_with_equal_scores() {
        let x = Array2::from_elem((8, 4), 3.25);
        let model = ocsvm_fit(x.view(), &OcsvmConfig::default()).unwrap();
        let scores: Vec<f64> = x.rows().into_iter().map(|r| model.decision(r)).collect();
        for &s in &scores {
            assert!(s >= 0.0, "center of a degenerate set must be accepted");
            assert_eq!(s, scores[0], "all identical points score identically");
        }
    }

    #[test]
    fn nu_property_bounds_outliers_and_support_vectors() {
        // The nu-property: nu upper-bounds the training-outlier fraction
        // and lower-bounds the support-vector fraction (2/n slack). Free
        // support vectors sit on the f = 0 margin up to solver tolerance
        // with random sign, so "outlier" means clearly below it.
        let n = 40;
        let margin = -10.0 * DEFAULT_TOLERANCE;
        let x = random_features(n, 2, 5);
        for &nu in &[0.05, 0.1, 0.2, 0.5] {
            let cfg = OcsvmConfig {
                nu,
                ..OcsvmConfig::default()
            };
            let model = ocsvm_fit(x.view(), &cfg).unwrap();
            let slack = 2.0 / n as f64;
            let outliers = x
                .rows()
                .into_iter()
                .filter(|r| model.decision(*r) < margin)
                .count() as f64
                / n as f64;
            let sv_fraction = model.n_support() as f64 / n as f64;
            assert!(
                outliers <= nu + slack,
                "nu {nu}: outlier fraction {outliers} above budget"
            );
            assert!(
                sv_fraction >= nu - slack,
                "nu {nu}: support-vector fraction {sv_fraction} too small"
            );
        }
    }

    #[test]
    fn dual_objective_matches_the_projected_gradient_reference() {
        // 20 small random instances; the reference solves the same QP with
        // a completely different method (projected gradient + bisection
        // projection), built before the working-set solver.
        for inst in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + inst);
            let n = rng.random_range(4..=12);
            let nu = [0.25, 0.5, 0.75][inst as usize % 3];
            let x = random_features(n, 3, 200 + inst);
            let cfg = OcsvmConfig {
                nu,
                gamma: GammaMode::Explicit(0.8),
                ..OcsvmConfig::default()
            };
            let model = ocsvm_fit(x.view(), &cfg).unwrap();
            let q_sv = kernel_matrix(model.support_vectors(), model.gamma());
            let obj = dual_objective(&q_sv, &model.alphas().to_owned());

            let q_full = kernel_matrix(x.view(), 0.8);
            let c = 1.0 / (nu * n as f64);
            let reference = pgd_reference(&q_full, c, 60_000);
            let obj_ref = dual_objective(&q_full, &reference);
            assert!(
                (obj - obj_ref).abs() <= 1e-4,
                "instance {inst}: objective {obj} vs reference {obj_ref}"
            );
        }
    }

    #[test]
    fn refitting_is_bit_stable_and_permutation_changes_little() {
        let x = random_features(20, 3, 6);
        let cfg = OcsvmConfig {
            nu: 0.2,
            ..OcsvmConfig::default()
        };
        let m1 = ocsvm_fit(x.view(), &cfg).unwrap();
        let m2 = ocsvm_fit(x.view(), &cfg).unwrap();
        let probe = random_features(5, 3, 7);
        // 1. Same input, same bits.
        for r in probe.rows() {
            assert_eq!(m1.decision(r), m2.decision(r));
        }
        // 2. Row-permuted input: same optimum up to solver tolerance.
        let perm: Vec<usize> = (0..20).rev().collect();
        let mut shuffled = Array2::zeros((20, 3));
        for (to, &from) in perm.iter().enumerate() {
            shuffled.row_mut(to).assign(&x.row(from));
        }
        let m3 = ocsvm_fit(shuffled.view(), &cfg).unwrap();
        for r in probe.rows() {
            assert!(
                (m1.decision(r) - m3.decision(r)).abs() < 1e-6,
                "permutation moved a decision value"
            );
        }
    }

    #[test]
    fn iteration_cap_is_a_hard_error_with_diagnostics() {
        let x = random_features(30, 3, 8);
        let cfg = OcsvmConfig {
            nu: 0.5,
            max_iter: 1,
            ..OcsvmConfig::default()
        };
        match ocsvm_fit(x.view(), &cfg) {
            Err(Error::NonConvergence {
                iterations,
                residual,
                tolerance,
            }) => {
                assert_eq!(iterations, 1);
                assert!(residual > tolerance);
            }
            other => panic!("expected NonConvergence, got {other:?}"),
        }
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let x = random_features(10, 3, 9);
        // 1. Too few points.
        assert!(ocsvm_fit(x.slice(ndarray::s![..1, ..]), &OcsvmConfig::default()).is_err());
        // 2. nu out of range.
        for bad in [0.0, -0.1, 1.5] {
            let cfg = OcsvmConfig {
                nu: bad,
                ..OcsvmConfig::default()
            };
            assert!(ocsvm_fit(x.view(), &cfg).is_err(), "nu = {bad} accepted");
        }
    }

    #[test]
    fn gamma_mode_serializes_as_scale_or_number() {
        let s = serde_json::to_string(&GammaMode::Scale).unwrap();
        assert_eq!(s, "\"scale\"");
        let e = serde_json::to_string(&GammaMode::Explicit(0.25)).unwrap();
        assert_eq!(e, "0.25");
        assert_eq!(
            serde_json::from_str::<GammaMode>("\"scale\"").unwrap(),
            GammaMode::Scale
        );
        assert_eq!(
            serde_json::from_str::<GammaMode>("2.0").unwrap(),
            GammaMode::Explicit(2.0)
        );
        assert!(serde_json::from_str::<GammaMode>("\"auto\"").is_err());
    }
}
