//! Biometric verification metrics: confusion counts at a threshold, ROC
//! curves with AUC and EER, and Gaussian kernel density estimates of score
//! distributions.
//!
//! Conventions: a score is accepted when it is at or above the threshold;
//! genuine queries should be accepted (TA) and impostor queries rejected
//! (TR). The ROC sweeps every distinct score as a threshold, AUC is the
//! trapezoid area under (FAR, TAR), and EER linearly interpolates the
//! FAR = FRR crossing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The four outcomes of verification at a fixed threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    /// Genuine accepted (true acceptance).
    pub ta: usize,
    /// Impostor rejected (true rejection).
    pub tr: usize,
    /// Impostor accepted (false acceptance).
    pub fa: usize,
    /// Genuine rejected (false rejection).
    pub fr: usize,
}

impl ConfusionCounts {
    /// True acceptance rate `TA / (TA + FR)`.
    pub fn tar(&self) -> f64 {
        self.ta as f64 / (self.ta + self.fr) as f64
    }

    /// True rejection rate `TR / (TR + FA)`.
    pub fn trr(&self) -> f64 {
        self.tr as f64 / (self.tr + self.fa) as f64
    }

    /// False acceptance rate `FA / (FA + TR)`.
    pub fn far(&self) -> f64 {
        self.fa as f64 / (self.fa + self.tr) as f64
    }

    /// False rejection rate `FR / (FR + TA)`.
    pub fn frr(&self) -> f64 {
        self.fr as f64 / (self.fr + self.ta) as f64
    }

    /// Balanced accuracy `(TAR + TRR) / 2`.
    pub fn bac(&self) -> f64 {
        0.5 * (self.tar() + self.trr())
    }
}

/// Counts outcomes of both score lists against one threshold
/// (accept ⇔ score ≥ threshold).
pub fn confusion(
    genuine: &[f64],
    impostor: &[f64],
    threshold: f64,
) -> Result<ConfusionCounts> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::InvalidParameter(
            "confusion counts need nonempty genuine and impostor score lists".into(),
        ));
    }
    let ta = genuine.iter().filter(|&&s| s >= threshold).count();
    let fa = impostor.iter().filter(|&&s| s >= threshold).count();
    Ok(ConfusionCounts {
        ta,
        tr: impostor.len() - fa,
        fa,
        fr: genuine.len() - ta,
    })
}

/// A receiver operating characteristic curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(FAR, TAR)` per threshold, starting at `(0, 0)` and ending at
    /// `(1, 1)`, nondecreasing in both coordinates.
    pub points: Vec<(f64, f64)>,
    /// Trapezoidal area under the curve.
    pub auc: f64,
    /// Equal error rate: the interpolated FAR = FRR crossing.
    pub eer: f64,
}

/// Builds the ROC by sweeping a threshold over every distinct score.
pub fn roc(genuine: &[f64], impostor: &[f64]) -> Result<RocCurve> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::InvalidParameter(
            "an ROC needs nonempty genuine and impostor score lists".into(),
        ));
    }
    let mut thresholds: Vec<f64> = genuine.iter().chain(impostor).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    // Descending thresholds make FAR and TAR sweep 0 -> 1.
    let mut points = Vec::with_capacity(thresholds.len() + 1);
    points.push((0.0, 0.0));
    for &t in thresholds.iter().rev() {
        let tar = genuine.iter().filter(|&&s| s >= t).count() as f64 / genuine.len() as f64;
        let far = impostor.iter().filter(|&&s| s >= t).count() as f64 / impostor.len() as f64;
        points.push((far, tar));
    }

    let auc = points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * 0.5 * (w[1].1 + w[0].1))
        .sum();

    // FAR - FRR runs monotonically from -1 at (0,0) to +1 at (1,1); find
    // the bracketing pair and interpolate the zero crossing.
    let diff = |(far, tar): (f64, f64)| far - (1.0 - tar);
    let k = points
        .iter()
        .position(|&p| diff(p) >= 0.0)
        .expect("curve ends at (1,1) where FAR - FRR = 1");
    let eer = if k == 0 {
        points[0].0
    } else {
        let (a, b) = (points[k - 1], points[k]);
        let (da, db) = (diff(a), diff(b));
        let lambda = -da / (db - da);
        a.0 + lambda * (b.0 - a.0)
    };
    Ok(RocCurve { points, auc, eer })
}

/// The probability that a random genuine score outranks a random impostor
/// score, ties counted half: the rank-statistic view of AUC.
pub fn pairwise_auc(genuine: &[f64], impostor: &[f64]) -> f64 {
    let mut credit = 0.0;
    for &g in genuine {
        for &i in impostor {
            if g > i {
                credit += 1.0;
            } else if g == i {
                credit += 0.5;
            }
        }
    }
    credit / (genuine.len() * impostor.len()) as f64
}

/// A Gaussian kernel density estimate over an evaluation grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianKde {
    /// Evaluation abscissae (uniform).
    pub grid: Vec<f64>,
    /// Density at each grid point.
    pub density: Vec<f64>,
    /// Silverman bandwidth actually used.
    pub bandwidth: f64,
}

/// Linear-interpolated quantile of sorted values (the common "type 7").
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Estimates the score density with a Gaussian kernel and Silverman's
/// bandwidth `0.9 * min(sigma, IQR/1.34) * n^(-1/5)`. The grid spans the
/// samples plus five bandwidths of margin, spaced finely enough that the
/// trapezoid integral of the density is 1 to within 1e-3.
pub fn gaussian_kde(samples: &[f64]) -> Result<GaussianKde> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter(
            "a density estimate needs at least one sample".into(),
        ));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sigma = if samples.len() > 1 {
        (samples.iter().map(|&s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);

    let spread = if iqr > 0.0 {
        sigma.min(iqr / 1.34)
    } else {
        sigma
    };
    let mut bandwidth = 0.9 * spread * n.powf(-0.2);
    if bandwidth <= 0.0 {
        // Degenerate sample (all values equal): any small width represents
        // a point mass smoothly.
        bandwidth = (mean.abs() * 1e-3).max(1e-3);
    }

    let lo = sorted[0] - 5.0 * bandwidth;
    let hi = sorted[sorted.len() - 1] + 5.0 * bandwidth;
    // Step at most bandwidth/4 keeps the quadrature error well under 1e-3.
    let n_grid = (((hi - lo) / (bandwidth / 4.0)).ceil() as usize + 1).clamp(64, 16_384);
    let step = (hi - lo) / (n_grid - 1) as f64;

    let norm = 1.0 / (n * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let grid: Vec<f64> = (0..n_grid).map(|i| lo + i as f64 * step).collect();
    let density: Vec<f64> = grid
        .iter()
        .map(|&x| {
            norm * samples
                .iter()
                .map(|&s| (-0.5 * ((x - s) / bandwidth).powi(2)).exp())
                .sum::<f64>()
        })
        .collect();
    Ok(GaussianKde {
        grid,
        density,
        bandwidth,
    })
}

impl GaussianKde {
    /// Trapezoid integral of the density over the grid.
    pub fn integral(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, y)| (x[1] - x[0]) * 0.5 * (y[0] + y[1]))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn confusion_handles_perfect_and_chance_separation() {
        // 1. Perfect separation at threshold 0.
        let c = confusion(&[1.0, 1.0], &[-1.0, -1.0], 0.0).unwrap();
        assert_eq!((c.ta, c.tr, c.fa, c.fr), (2, 2, 0, 0));
        assert_eq!(c.bac(), 1.0);
        // 2. Chance: same mix on both sides.
        let c = confusion(&[1.0, -1.0], &[1.0, -1.0], 0.0).unwrap();
        assert_eq!(c.bac(), 0.5);
        // 3. Empty lists are rejected.
        assert!(confusion(&[], &[1.0], 0.0).is_err());
        assert!(confusion(&[1.0], &[], 0.0).is_err());
    }

    #[test]
    fn confusion_matches_an_exhaustive_recount() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let gen: Vec<f64> = (0..30).map(|_| rng.random_range(-2.0..2.0)).collect();
            let imp: Vec<f64> = (0..40).map(|_| rng.random_range(-2.0..2.0)).collect();
            let t = rng.random_range(-1.0..1.0);
            let c = confusion(&gen, &imp, t).unwrap();
            // Brute recount, sample by sample.
            let (mut ta, mut tr, mut fa, mut fr) = (0, 0, 0, 0);
            for &s in &gen {
                if s >= t {
                    ta += 1;
                } else {
                    fr += 1;
                }
            }
            for &s in &imp {
                if s >= t {
                    fa += 1;
                } else {
                    tr += 1;
                }
            }
            assert_eq!((c.ta, c.tr, c.fa, c.fr), (ta, tr, fa, fr));
        }
    }

    #[test]
    fn rate_identities_hold_exactly() {
        let c = ConfusionCounts {
            ta: 17,
            tr: 23,
            fa: 7,
            fr: 3,
        };
        assert_eq!(c.tar() + c.frr(), 1.0);
        assert_eq!(c.trr() + c.far(), 1.0);
        assert_eq!(c.bac(), 0.5 * (c.tar() + c.trr()));
    }

    #[test]
    fn roc_extremes_behave() {
        // 1. Perfect separation.
        let r = roc(&[2.0, 3.0, 4.0], &[-1.0, 0.0, 1.0]).unwrap();
        assert_eq!(r.auc, 1.0);
        assert_eq!(r.eer, 0.0);
        // 2. Identical lists: chance.
        let r = roc(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0]).unwrap();
        assert!((r.auc - 0.5).abs() < 1e-12);
        assert!((r.eer - 0.5).abs() < 1e-12);
    }

    #[test]
    fn roc_points_are_monotone_and_span_the_unit_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gen: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..2.0)).collect();
        let imp: Vec<f64> = (0..70).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = roc(&gen, &imp).unwrap();
        assert_eq!(r.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(r.points.last(), Some(&(1.0, 1.0)));
        for w in r.points.windows(2) {
            assert!(w[1].0 >= w[0].0, "FAR must not decrease");
            assert!(w[1].1 >= w[0].1, "TAR must not decrease");
        }
    }

    #[test]
    fn sweep_auc_equals_pairwise_auc_with_ties() {
        // 50 random score sets, drawn from a small integer lattice so ties
        // are frequent; the two AUC definitions must agree to 1e-12.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..50 {
            let ng = rng.random_range(5..60);
            let ni = rng.random_range(5..60);
            let gen: Vec<f64> = (0..ng).map(|_| rng.random_range(0..8) as f64 * 0.25).collect();
            let imp: Vec<f64> = (0..ni)
                .map(|_| rng.random_range(-4..4) as f64 * 0.25)
                .collect();
            let sweep = roc(&gen, &imp).unwrap().auc;
            let pairs = pairwise_auc(&gen, &imp);
            assert!(
                (sweep - pairs).abs() < 1e-12,
                "trial {trial}: sweep {sweep} vs pairwise {pairs}"
            );
        }
    }

    #[test]
    fn chance_auc_is_near_half_on_large_identical_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gen: Vec<f64> = (0..1000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let imp: Vec<f64> = (0..1000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = roc(&gen, &imp).unwrap();
        assert!(
            (r.auc - 0.5).abs() < 0.05,
            "identical distributions gave AUC {}",
            r.auc
        );
    }

    #[test]
    fn eer_crossing_is_bracketed_within_one_sample_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let gen: Vec<f64> = (0..40).map(|_| rng.random_range(0.0..2.0)).collect();
            let imp: Vec<f64> = (0..60).map(|_| rng.random_range(-1.0..1.5)).collect();
            let r = roc(&gen, &imp).unwrap();
            assert!((0.0..=1.0).contains(&r.eer));
            // The bracketing sweep points around the crossing disagree by
            // at most one sample step on each side.
            let step = 1.0 / 40.0 + 1.0 / 60.0;
            let k = r
                .points
                .iter()
                .position(|&(far, tar)| far - (1.0 - tar) >= 0.0)
                .unwrap();
            if k > 0 {
                let before = r.points[k - 1];
                let after = r.points[k];
                let gap = (after.0 - (1.0 - after.1)) - (before.0 - (1.0 - before.1));
                assert!(gap <= step + 1e-12, "crossing gap {gap} exceeds {step}");
            }
        }
    }

    #[test]
    fn kde_integrates_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        // 1. Smooth Gaussian-ish sample.
        let normals: Vec<f64> = (0..200)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let kde = gaussian_kde(&normals).unwrap();
        assert!((kde.integral() - 1.0).abs() < 1e-3, "{}", kde.integral());
        // 2. Uniform sample.
        let uniform: Vec<f64> = (0..100).map(|_| rng.random_range(3.0..9.0)).collect();
        let kde = gaussian_kde(&uniform).unwrap();
        assert!((kde.integral() - 1.0).abs() < 1e-3);
        // 3. Heavy ties.
        let ties: Vec<f64> = (0..60).map(|i| (i % 3) as f64).collect();
        let kde = gaussian_kde(&ties).unwrap();
        assert!((kde.integral() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn kde_bandwidth_follows_silvermans_rule() {
        // Standard normal-ish spread: sigma ~ 1, IQR/1.34 ~ 1, n = 200:
        // h ~ 0.9 * 1 * 200^(-1/5) ~ 0.31.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let samples: Vec<f64> = (0..200)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let kde = gaussian_kde(&samples).unwrap();
        assert!(
            (0.2..0.45).contains(&kde.bandwidth),
            "bandwidth {} is far from Silverman's value",
            kde.bandwidth
        );
    }

    #[test]
    fn kde_survives_degenerate_samples() {
        // 1. All-identical scores: point mass, still integrates to 1.
        let kde = gaussian_kde(&[0.5; 12]).unwrap();
        assert!(kde.bandwidth > 0.0);
        assert!((kde.integral() - 1.0).abs() < 1e-3);
        assert!(kde.density.iter().all(|d| d.is_finite()));
        // 2. A single sample.
        let kde = gaussian_kde(&[2.0]).unwrap();
        assert!((kde.integral() - 1.0).abs() < 1e-3);
        // 3. Empty input is an error.
        assert!(gaussian_kde(&[]).is_err());
    }
}
