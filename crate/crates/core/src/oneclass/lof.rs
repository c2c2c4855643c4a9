//! Local outlier factor for one-class authentication.
//!
//! For each training point, fitting precomputes its k-distance (distance
//! to the k-th nearest other point), its neighbor set (every point within
//! the k-distance, so ties are all included), and its local reachability
//! density
//!
//! ```text
//! lrd(p) = 1 / mean over neighbors o of max(kdist(o), d(p, o))
//! ```
//!
//! A query's LOF is the mean neighbor density over its own density:
//! values near 1 mean the query is as dense as its neighborhood, larger
//! values mean it is an outlier. The authentication score is the negated
//! LOF, so larger still means more legitimate, and a query is accepted
//! when its LOF stays at or below a threshold.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Default neighborhood size.
pub const DEFAULT_NEIGHBORS: usize = 3;

/// Default acceptance cutoff on the LOF value itself.
pub const DEFAULT_LOF_THRESHOLD: f64 = 1.5;

/// Guard against zero mean reachability (clusters of duplicates).
const DENSITY_GUARD: f64 = 1e-12;

/// A fitted LOF model.
#[derive(Debug, Clone)]
pub struct LofModel {
    points: Array2<f64>,
    k: usize,
    threshold: f64,
    /// Per training point: distance to its k-th nearest other point.
    kdist: Vec<f64>,
    /// Per training point: local reachability density.
    lrd: Vec<f64>,
}

fn euclidean(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// k-distance and the tie-inclusive neighbor set, given distances to all
/// candidate points (the point itself must not be among them).
fn neighborhood(dists: &[f64], k: usize) -> (f64, Vec<usize>) {
    let mut order: Vec<usize> = (0..dists.len()).collect();
    order.sort_by(|&a, &b| dists[a].total_cmp(&dists[b]));
    let kdist = dists[order[k - 1]];
    let neighbors = order
        .iter()
        .copied()
        .take_while(|&i| dists[i] <= kdist)
        .collect();
    (kdist, neighbors)
}

/// Fits an LOF model on the rows of `points`.
pub fn lof_fit(points: ArrayView2<f64>, k: usize, threshold: f64) -> Result<LofModel> {
    let n = points.nrows();
    if k == 0 {
        return Err(Error::InvalidParameter("need at least 1 neighbor".into()));
    }
    if n <= k {
        return Err(Error::InvalidParameter(format!(
            "neighborhood size {k} requires more than {k} training points, got {n}"
        )));
    }
    if !(threshold > 0.0) {
        return Err(Error::InvalidParameter(
            "the LOF acceptance threshold must be positive".into(),
        ));
    }

    // Pairwise distances once; everything else derives from them.
    let mut dist = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..i {
            let d = euclidean(points.row(i), points.row(j));
            dist[(i, j)] = d;
            dist[(j, i)] = d;
        }
    }

    let mut kdist = Vec::with_capacity(n);
    let mut neighbors: Vec<Vec<usize>> = Vec::with_capacity(n);
    for p in 0..n {
        let others: Vec<f64> = (0..n).filter(|&o| o != p).map(|o| dist[(p, o)]).collect();
        let (kd, nbrs) = neighborhood(&others, k);
        // Map back to absolute indices (skipping p shifted them down).
        let abs: Vec<usize> = nbrs
            .into_iter()
            .map(|i| if i < p { i } else { i + 1 })
            .collect();
        kdist.push(kd);
        neighbors.push(abs);
    }

    let lrd: Vec<f64> = (0..n)
        .map(|p| {
            let mean_reach = neighbors[p]
                .iter()
                .map(|&o| dist[(p, o)].max(kdist[o]))
                .sum::<f64>()
                / neighbors[p].len() as f64;
            1.0 / mean_reach.max(DENSITY_GUARD)
        })
        .collect();

    Ok(LofModel {
        points: points.to_owned(),
        k,
        threshold,
        kdist,
        lrd,
    })
}

impl LofModel {
    /// The LOF value of a query against the training set.
    pub fn lof(&self, x: ArrayView1<f64>) -> f64 {
        assert_eq!(
            x.len(),
            self.feature_dim(),
            "query dimension must match the training features"
        );
        let dists: Vec<f64> = self
            .points
            .rows()
            .into_iter()
            .map(|p| euclidean(p, x))
            .collect();
        let (_, neighbors) = neighborhood(&dists, self.k);
        let mean_reach = neighbors
            .iter()
            .map(|&o| dists[o].max(self.kdist[o]))
            .sum::<f64>()
            / neighbors.len() as f64;
        let lrd_q = 1.0 / mean_reach.max(DENSITY_GUARD);
        let mean_neighbor_lrd =
            neighbors.iter().map(|&o| self.lrd[o]).sum::<f64>() / neighbors.len() as f64;
        mean_neighbor_lrd / lrd_q
    }

    /// Authentication score: the negated LOF (higher = more legitimate).
    pub fn score(&self, x: ArrayView1<f64>) -> f64 {
        -self.lof(x)
    }

    /// Whether the query's LOF stays within the acceptance threshold.
    pub fn accepts(&self, x: ArrayView1<f64>) -> bool {
        self.lof(x) <= self.threshold
    }

    /// Neighborhood size.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Acceptance cutoff on the LOF value.
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Dimensionality of the feature space.
    pub fn feature_dim(&self) -> usize {
        self.points.ncols()
    }

    /// Training points, one per row.
    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.points.view()
    }
}
