//! Weighted Euclidean and spherical k-means, plus the unrolled layer that
//! runs the same iterations on a differentiation tape.
//!
//! Spherical mode clusters row-normalized points by cosine similarity, keeps
//! unit-norm centroids while iterating, and finally recomputes each centroid
//! as the weighted mean of the original (un-normalized) points of its cluster.

mod attractors;
mod unfold;

pub use attractors::{fixed_attractors_from_training, AttractorSet, Provenance};
pub use unfold::{unfolded_kmeans_layer, UnfoldedClusters};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::diffcore::{kernels, DiffError, Tensor};

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("invalid clustering config: {0}")]
    InvalidConfig(String),
    #[error("need {k} distinct points, found only {distinct}")]
    DegenerateInput { k: usize, distinct: usize },
    #[error("{0}")]
    Shape(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    #[default]
    Spherical,
}

impl std::str::FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "euclidean" | "euclid" => Ok(Metric::Euclidean),
            "spherical" => Ok(Metric::Spherical),
            _ => Err(format!("unknown metric '{s}' (euclidean|spherical)")),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Euclidean => "euclidean",
            Metric::Spherical => "spherical",
        })
    }
}

/// How point weights enter the centroid update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    Uniform,
    /// Caller-supplied weights, normally squared mixture magnitudes.
    #[default]
    Energy,
}

impl std::str::FromStr for Weighting {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "uniform" => Ok(Weighting::Uniform),
            "energy" => Ok(Weighting::Energy),
            _ => Err(format!("unknown weighting '{s}' (uniform|energy)")),
        }
    }
}

impl std::fmt::Display for Weighting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Weighting::Uniform => "uniform",
            Weighting::Energy => "energy",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Init {
    /// Seeded uniform sampling of `k` distinct points.
    #[default]
    Random,
    /// Weighted k-means++ seeding.
    PlusPlus,
    /// Explicit point indices, one per cluster.
    Indices(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    pub k: usize,
    pub metric: Metric,
    /// Number of assignment/update iterations.
    pub iterations: usize,
    pub weighting: Weighting,
    pub seed: u64,
    /// Stop once no centroid moves more than this (only with `early_stop`).
    pub convergence_tol: f64,
    /// Allow stopping before `iterations` when assignments stop changing.
    pub early_stop: bool,
    pub init: Init,
    /// Use uniform weights for the final un-normalized recomputation in
    /// spherical mode, regardless of `weighting`.
    pub final_uniform: bool,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            k: 2,
            metric: Metric::Spherical,
            iterations: 20,
            weighting: Weighting::Energy,
            seed: 0,
            convergence_tol: 0.0,
            early_stop: true,
            init: Init::Random,
            final_uniform: false,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<(), ClusterError> {
        if self.k == 0 {
            return Err(ClusterError::InvalidConfig("k must be at least 1".into()));
        }
        if self.iterations == 0 {
            return Err(ClusterError::InvalidConfig("iterations must be at least 1".into()));
        }
        if let Init::Indices(ix) = &self.init {
            if ix.len() != self.k {
                return Err(ClusterError::InvalidConfig(format!(
                    "{} initial indices for k = {}",
                    ix.len(),
                    self.k
                )));
            }
        }
        Ok(())
    }

    /// Weights used by the iterative updates.
    pub(crate) fn effective_weights(&self, weights: &[f64]) -> Vec<f64> {
        match self.weighting {
            Weighting::Uniform => vec![1.0; weights.len()],
            Weighting::Energy => weights.to_vec(),
        }
    }

    pub(crate) fn final_weights(&self, weights: &[f64]) -> Vec<f64> {
        if self.final_uniform {
            vec![1.0; weights.len()]
        } else {
            self.effective_weights(weights)
        }
    }
}

/// Result of one clustering run.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    pub centroids: Tensor,
    pub assignments: Vec<usize>,
    pub weights: Vec<f64>,
    /// Iterations actually executed.
    pub iterations: usize,
    /// Objective after each update: weighted squared error (Euclidean) or
    /// weighted cosine similarity (spherical, before the final recomputation).
    pub objective: Vec<f64>,
}

/// Index of the largest score, ties to the lowest index.
fn argmax(scores: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (l, s) in scores.enumerate() {
        if s > best.1 {
            best = (l, s);
        }
    }
    best.0
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Cosine-similarity assignment of unit-norm points.
pub fn assign_spherical(points_normalized: &Tensor, centroids: &Tensor) -> Vec<usize> {
    (0..points_normalized.rows())
        .map(|i| {
            let p = points_normalized.row_slice(i);
            argmax((0..centroids.rows()).map(|l| dot(p, centroids.row_slice(l))))
        })
        .collect()
}

/// Nearest-centroid assignment, ties to the lowest index.
pub fn assign_euclidean(points: &Tensor, centroids: &Tensor) -> Vec<usize> {
    (0..points.rows())
        .map(|i| {
            let p = points.row_slice(i);
            argmax((0..centroids.rows()).map(|l| -sq_dist(p, centroids.row_slice(l))))
        })
        .collect()
}

pub(crate) fn assign(metric: Metric, work: &Tensor, centroids: &Tensor) -> Vec<usize> {
    match metric {
        Metric::Euclidean => assign_euclidean(work, centroids),
        Metric::Spherical => assign_spherical(work, centroids),
    }
}

/// Dissimilarity used for re-seeding and k-means++.
fn dissimilarity(metric: Metric, p: &[f64], c: &[f64]) -> f64 {
    match metric {
        Metric::Euclidean => sq_dist(p, c),
        Metric::Spherical => 1.0 - dot(p, c),
    }
}

/// Weighted per-cluster means; spherical mode renormalizes them to unit norm.
pub fn update_weighted(points: &Tensor, assignments: &[usize], weights: &[f64], k: usize, metric: Metric) -> Tensor {
    let coef = kernels::segment_coefficients(assignments, weights, k);
    let means = kernels::segment_mean(points, assignments, &coef, k);
    match metric {
        Metric::Euclidean => means,
        Metric::Spherical => kernels::normalize_rows(&means),
    }
}

/// Moves one point into every empty cluster: the point with the largest
/// weighted dissimilarity to its current centroid among clusters that keep
/// at least one member. Returns whether anything moved.
pub(crate) fn reseed_empty(
    metric: Metric,
    work: &Tensor,
    weights: &[f64],
    centroids: &Tensor,
    assignments: &mut [usize],
    k: usize,
) -> bool {
    let mut counts = vec![0usize; k];
    for &a in assignments.iter() {
        counts[a] += 1;
    }
    let mut moved = false;
    for l in 0..k {
        if counts[l] > 0 {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, &a) in assignments.iter().enumerate() {
            if counts[a] < 2 {
                continue;
            }
            let score = weights[i] * dissimilarity(metric, work.row_slice(i), centroids.row_slice(a));
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((i, score));
            }
        }
        if let Some((i, _)) = best {
            counts[assignments[i]] -= 1;
            assignments[i] = l;
            counts[l] = 1;
            moved = true;
        }
    }
    moved
}

/// Objective for monitoring: weighted SSE or weighted cosine sum.
pub fn objective(metric: Metric, work: &Tensor, centroids: &Tensor, assignments: &[usize], weights: &[f64]) -> f64 {
    assignments
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let (p, c) = (work.row_slice(i), centroids.row_slice(a));
            weights[i]
                * match metric {
                    Metric::Euclidean => sq_dist(p, c),
                    Metric::Spherical => dot(p, c),
                }
        })
        .sum()
}

/// Picks the initial centroid rows (indices into `work`).
pub(crate) fn init_indices(work: &Tensor, weights: &[f64], cfg: &ClusterConfig) -> Result<Vec<usize>, ClusterError> {
    let n = work.rows();
    let k = cfg.k;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let distinct_from = |chosen: &[usize], i: usize| chosen.iter().all(|&j| work.row_slice(j) != work.row_slice(i));
    let count_distinct = || {
        let mut seen: Vec<usize> = Vec::new();
        for i in 0..n {
            if distinct_from(&seen, i) {
                seen.push(i);
                if seen.len() >= k {
                    break;
                }
            }
        }
        seen.len()
    };
    match &cfg.init {
        Init::Indices(ix) => {
            if let Some(&bad) = ix.iter().find(|&&i| i >= n) {
                return Err(ClusterError::InvalidConfig(format!("initial index {bad} out of range")));
            }
            Ok(ix.clone())
        }
        Init::Random => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut chosen = Vec::with_capacity(k);
            for i in order {
                if distinct_from(&chosen, i) {
                    chosen.push(i);
                    if chosen.len() == k {
                        return Ok(chosen);
                    }
                }
            }
            Err(ClusterError::DegenerateInput {
                k,
                distinct: chosen.len(),
            })
        }
        Init::PlusPlus => {
            if count_distinct() < k {
                return Err(ClusterError::DegenerateInput {
                    k,
                    distinct: count_distinct(),
                });
            }
            let total: f64 = weights.iter().sum();
            let first = if total > 0.0 {
                let mut r = rng.gen::<f64>() * total;
                let mut pick = n - 1;
                for (i, w) in weights.iter().enumerate() {
                    if r < *w {
                        pick = i;
                        break;
                    }
                    r -= w;
                }
                pick
            } else {
                rng.gen_range(0..n)
            };
            let mut chosen = vec![first];
            let mut best: Vec<f64> = (0..n)
                .map(|i| dissimilarity(cfg.metric, work.row_slice(i), work.row_slice(first)).max(0.0))
                .collect();
            while chosen.len() < k {
                let scores: Vec<f64> = (0..n)
                    .map(|i| if distinct_from(&chosen, i) { weights[i].max(1e-300) * best[i] } else { 0.0 })
                    .collect();
                let total: f64 = scores.iter().sum();
                let pick = if total > 0.0 {
                    let mut r = rng.gen::<f64>() * total;
                    let mut pick = None;
                    for (i, s) in scores.iter().enumerate() {
                        if *s > 0.0 && r < *s {
                            pick = Some(i);
                            break;
                        }
                        r -= s;
                    }
                    pick.unwrap_or_else(|| scores.iter().rposition(|&s| s > 0.0).unwrap_or(0))
                } else {
                    (0..n).find(|&i| distinct_from(&chosen, i)).unwrap_or(0)
                };
                chosen.push(pick);
                for (i, b) in best.iter_mut().enumerate() {
                    *b = b.min(dissimilarity(cfg.metric, work.row_slice(i), work.row_slice(pick)).max(0.0));
                }
            }
            Ok(chosen)
        }
    }
}

pub(crate) fn gather_rows(x: &Tensor, idx: &[usize]) -> Tensor {
    let d = x.cols();
    let mut data = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        data.extend_from_slice(x.row_slice(i));
    }
    Tensor::new(idx.len(), d, data).expect("gathered rows")
}

pub(crate) fn check_inputs(points: &Tensor, weights: &[f64], cfg: &ClusterConfig) -> Result<(), ClusterError> {
    cfg.validate()?;
    if weights.len() != points.rows() {
        return Err(ClusterError::Shape(format!(
            "{} weights for {} points",
            weights.len(),
            points.rows()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(ClusterError::InvalidConfig("weights must be finite and non-negative".into()));
    }
    if points.rows() < cfg.k {
        return Err(ClusterError::DegenerateInput {
            k: cfg.k,
            distinct: points.rows(),
        });
    }
    Ok(())
}

/// Weighted k-means (Euclidean or spherical) on the rows of `points`.
///
/// `weights` are used when `cfg.weighting` is [`Weighting::Energy`] and
/// ignored for [`Weighting::Uniform`].
pub fn kmeans(points: &Tensor, weights: &[f64], cfg: &ClusterConfig) -> Result<ClusterState, ClusterError> {
    check_inputs(points, weights, cfg)?;
    let k = cfg.k;
    let w = cfg.effective_weights(weights);
    let work = match cfg.metric {
        Metric::Euclidean => points.clone(),
        Metric::Spherical => kernels::normalize_rows(points),
    };
    let mut centroids = gather_rows(&work, &init_indices(&work, &w, cfg)?);
    let mut assignments: Vec<usize> = Vec::new();
    let mut objective_log = Vec::new();
    let mut iterations = 0;
    for _ in 0..cfg.iterations {
        let mut next = assign(cfg.metric, &work, &centroids);
        reseed_empty(cfg.metric, &work, &w, &centroids, &mut next, k);
        let unchanged = next == assignments;
        assignments = next;
        let updated = update_weighted(&work, &assignments, &w, k, cfg.metric);
        let shift = updated
            .data()
            .iter()
            .zip(centroids.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        centroids = updated;
        iterations += 1;
        objective_log.push(objective(cfg.metric, &work, &centroids, &assignments, &w));
        if cfg.early_stop && (unchanged || shift <= cfg.convergence_tol) {
            break;
        }
    }
    if cfg.metric == Metric::Spherical {
        let fw = cfg.final_weights(weights);
        let coef = kernels::segment_coefficients(&assignments, &fw, k);
        centroids = kernels::segment_mean(points, &assignments, &coef, k);
    }
    Ok(ClusterState {
        centroids,
        assignments,
        weights: w,
        iterations,
        objective: objective_log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn spherical_assignment_splits_opposite_rays() {
        let pts = kernels::normalize_rows(&t(&[&[1.0, 1.0], &[3.0, 3.0], &[-2.0, -2.0], &[-0.5, -0.5]]));
        let cents = kernels::normalize_rows(&t(&[&[1.0, 1.0], &[-1.0, -1.0]]));
        assert_eq!(assign_spherical(&pts, &cents), vec![0, 0, 1, 1]);
        let one = t(&[&[0.0, 1.0]]);
        assert_eq!(assign_spherical(&pts, &one), vec![0; 4]);
    }

    #[test]
    fn euclidean_assignment_examples() {
        let cents = t(&[&[0.0], &[10.0]]);
        assert_eq!(assign_euclidean(&t(&[&[4.0], &[10.0], &[5.0]]), &cents), vec![0, 1, 0]);
        let c2 = t(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(assign_euclidean(&t(&[&[3.0, 4.0]]), &c2), vec![1]);
    }

    #[test]
    fn update_examples() {
        let c = update_weighted(&t(&[&[0.0, 0.0], &[2.0, 0.0]]), &[0, 0], &[1.0, 1.0], 1, Metric::Euclidean);
        assert_eq!(c.data(), &[1.0, 0.0]);
        let c = update_weighted(&t(&[&[0.0], &[4.0]]), &[0, 0], &[1.0, 3.0], 1, Metric::Euclidean);
        assert_eq!(c.data(), &[3.0]);
        let c = update_weighted(&t(&[&[3.0, 4.0]]), &[0], &[1.0], 1, Metric::Spherical);
        assert!((c.data()[0] - 0.6).abs() < 1e-12 && (c.data()[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn points_at_k_locations_are_a_fixed_point() {
        let pts = t(&[&[0.0, 0.0], &[5.0, 1.0], &[-3.0, 2.0]]);
        let cfg = ClusterConfig {
            k: 3,
            metric: Metric::Euclidean,
            weighting: Weighting::Uniform,
            ..Default::default()
        };
        let s = kmeans(&pts, &[1.0; 3], &cfg).unwrap();
        // second iteration detects the unchanged assignment
        assert!(s.iterations <= 2);
        let mut rows: Vec<Vec<f64>> = (0..3).map(|l| s.centroids.row_slice(l).to_vec()).collect();
        rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(rows, vec![vec![-3.0, 2.0], vec![0.0, 0.0], vec![5.0, 1.0]]);
    }

    #[test]
    fn too_few_distinct_points_is_degenerate() {
        let pts = t(&[&[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0]]);
        let cfg = ClusterConfig {
            k: 2,
            ..Default::default()
        };
        assert!(matches!(kmeans(&pts, &[1.0; 3], &cfg), Err(ClusterError::DegenerateInput { .. })));
        let cfg = ClusterConfig {
            k: 4,
            ..Default::default()
        };
        assert!(matches!(kmeans(&pts, &[1.0; 3], &cfg), Err(ClusterError::DegenerateInput { .. })));
    }

    #[test]
    fn empty_cluster_is_reseeded_at_farthest_weighted_point() {
        let work = t(&[&[0.0], &[1.0], &[9.0]]);
        let cents = t(&[&[0.0], &[100.0]]);
        let mut a = assign_euclidean(&work, &cents);
        assert_eq!(a, vec![0, 0, 0]);
        assert!(reseed_empty(Metric::Euclidean, &work, &[1.0, 1.0, 1.0], &cents, &mut a, 2));
        assert_eq!(a, vec![0, 0, 1]);
        // a heavy weight wins over distance
        let mut a = vec![0, 0, 0];
        reseed_empty(Metric::Euclidean, &work, &[1.0, 1000.0, 1.0], &cents, &mut a, 2);
        assert_eq!(a, vec![0, 1, 0]);
    }

    #[test]
    fn spherical_final_step_uses_unnormalized_points() {
        let pts = t(&[&[2.0, 0.0], &[4.0, 0.0], &[0.0, 1.0], &[0.0, 3.0]]);
        let cfg = ClusterConfig {
            k: 2,
            weighting: Weighting::Uniform,
            init: Init::Indices(vec![0, 2]),
            ..Default::default()
        };
        let s = kmeans(&pts, &[1.0; 4], &cfg).unwrap();
        assert_eq!(s.assignments, vec![0, 0, 1, 1]);
        assert_eq!(s.centroids.data(), &[3.0, 0.0, 0.0, 2.0]);
    }

    #[test]
    fn metric_and_weighting_parse() {
        assert_eq!("spherical".parse::<Metric>().unwrap(), Metric::Spherical);
        assert_eq!("euclidean".parse::<Metric>().unwrap(), Metric::Euclidean);
        assert!("cosine".parse::<Metric>().is_err());
        assert_eq!("uniform".parse::<Weighting>().unwrap(), Weighting::Uniform);
    }
}
