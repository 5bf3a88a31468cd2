//! Synthetic check of how well each k-means metric recovers ideal attractors.
//!
//! Ray-shaped clusters spread along a direction with widely varying norm, as
//! trained embeddings of loud and quiet bins do; ball-shaped clusters are
//! isotropic Gaussians. The ideal attractor of a cluster is the mean of its
//! generating points.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::clustering::{kmeans, ClusterConfig, ClusterError, Metric, Weighting};
use crate::diffcore::Tensor;
use crate::perm::permutations;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ClusterShape {
    #[default]
    Rays,
    Balls,
}

impl std::str::FromStr for ClusterShape {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "rays" | "ray" => Ok(Self::Rays),
            "balls" | "ball" => Ok(Self::Balls),
            _ => Err(format!("unknown cluster shape '{s}' (rays|balls)")),
        }
    }
}

impl std::fmt::Display for ClusterShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Rays => "rays",
            Self::Balls => "balls",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub instances: usize,
    pub k: usize,
    pub dim: usize,
    pub points_per_cluster: usize,
    pub shape: ClusterShape,
    /// Angular jitter of rays / standard deviation of balls.
    pub spread: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            instances: 100,
            k: 2,
            dim: 8,
            points_per_cluster: 200,
            shape: ClusterShape::Rays,
            spread: 0.15,
            iterations: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub instance: usize,
    pub metric: Metric,
    /// Mean `1 − cos` between matched centroids and ideal attractors.
    pub cosine_error: f64,
    /// Mean Euclidean distance between matched centroids and ideal attractors.
    pub euclidean_error: f64,
}

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb).max(1e-300)
}

/// Points (cluster-major) and the ideal attractor of every cluster.
pub fn bench_instance(cfg: &BenchConfig, instance: usize) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(1_000_003).wrapping_add(instance as u64));
    let (k, d, n) = (cfg.k, cfg.dim, cfg.points_per_cluster);
    // directions at least loosely separated so every instance is separable
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(k);
    while dirs.len() < k {
        let c = unit(&mut rng, d);
        if dirs.iter().all(|o| cosine(o, &c) < 0.5) {
            dirs.push(c);
        }
    }
    let mut data = Vec::with_capacity(k * n * d);
    let mut ideal = Vec::with_capacity(k * d);
    for dir in &dirs {
        let mut mean = vec![0.0; d];
        // per-cluster loudness makes rays of unequal length
        let reach = rng.gen_range(1.0..4.0);
        for _ in 0..n {
            let p: Vec<f64> = match cfg.shape {
                ClusterShape::Rays => {
                    let r = reach * rng.gen::<f64>().powi(2);
                    dir.iter()
                        .map(|x| r * (x + cfg.spread * gauss(&mut rng)))
                        .collect()
                }
                ClusterShape::Balls => dir
                    .iter()
                    .map(|x| 3.0 * x + cfg.spread * gauss(&mut rng))
                    .collect(),
            };
            for (m, x) in mean.iter_mut().zip(&p) {
                *m += x / n as f64;
            }
            data.extend(p);
        }
        ideal.extend(mean);
    }
    (
        Tensor::new(k * n, d, data).expect("bench points"),
        Tensor::new(k, d, ideal).expect("bench attractors"),
    )
}

/// Mean errors under the best matching of centroids to attractors.
pub fn attractor_errors(centroids: &Tensor, ideal: &Tensor) -> (f64, f64) {
    let k = ideal.rows();
    let mut best = (f64::INFINITY, f64::INFINITY);
    for p in permutations(k) {
        let mut cos_err = 0.0;
        let mut euc = 0.0;
        for (l, &j) in p.iter().enumerate() {
            let (c, a) = (centroids.row_slice(j), ideal.row_slice(l));
            cos_err += 1.0 - cosine(c, a);
            euc += c.iter().zip(a).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        }
        if cos_err < best.0 {
            best = (cos_err, euc);
        }
    }
    (best.0 / k as f64, best.1 / k as f64)
}

pub fn cluster_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>, ClusterError> {
    if cfg.instances == 0 || cfg.dim == 0 || cfg.points_per_cluster == 0 {
        return Err(ClusterError::InvalidConfig("bench sizes must be positive".into()));
    }
    let mut rows = Vec::with_capacity(2 * cfg.instances);
    for i in 0..cfg.instances {
        let (points, ideal) = bench_instance(cfg, i);
        let w = vec![1.0; points.rows()];
        for metric in [Metric::Euclidean, Metric::Spherical] {
            let cc = ClusterConfig {
                k: cfg.k,
                metric,
                iterations: cfg.iterations,
                weighting: Weighting::Uniform,
                seed: cfg.seed ^ i as u64,
                ..Default::default()
            };
            let state = kmeans(&points, &w, &cc)?;
            let (cosine_error, euclidean_error) = attractor_errors(&state.centroids, &ideal);
            rows.push(BenchRow {
                instance: i,
                metric,
                cosine_error,
                euclidean_error,
            });
        }
    }
    Ok(rows)
}

/// Mean (cosine, Euclidean) error of one metric.
pub fn bench_means(rows: &[BenchRow], metric: Metric) -> (f64, f64) {
    let sel: Vec<&BenchRow> = rows.iter().filter(|r| r.metric == metric).collect();
    let n = sel.len().max(1) as f64;
    (
        sel.iter().map(|r| r.cosine_error).sum::<f64>() / n,
        sel.iter().map(|r| r.euclidean_error).sum::<f64>() / n,
    )
}

/// Per-instance rows followed by one `mean` row per metric.
pub fn write_bench_csv(mut out: impl Write, rows: &[BenchRow]) -> std::io::Result<()> {
    writeln!(out, "instance,metric,cosine_error,euclidean_error")?;
    for r in rows {
        writeln!(out, "{},{},{:.9},{:.9}", r.instance, r.metric, r.cosine_error, r.euclidean_error)?;
    }
    for metric in [Metric::Euclidean, Metric::Spherical] {
        let (c, e) = bench_means(rows, metric);
        writeln!(out, "mean,{metric},{c:.9},{e:.9}")?;
    }
    Ok(())
}

pub fn write_bench_file(path: &Path, rows: &[BenchRow]) -> std::io::Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_bench_csv(&mut w, rows)?;
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spherical_recovers_ray_attractors_better() {
        let rows = cluster_bench(&BenchConfig::default()).unwrap();
        let (sph, _) = bench_means(&rows, Metric::Spherical);
        let (euc, _) = bench_means(&rows, Metric::Euclidean);
        assert!(sph < euc, "{sph} vs {euc}");
    }

    #[test]
    fn balls_are_comparable() {
        let cfg = BenchConfig {
            shape: ClusterShape::Balls,
            spread: 0.5,
            ..Default::default()
        };
        let rows = cluster_bench(&cfg).unwrap();
        let (sph, _) = bench_means(&rows, Metric::Spherical);
        let (euc, _) = bench_means(&rows, Metric::Euclidean);
        assert!((sph - euc).abs() < 0.01, "{sph} vs {euc}");
    }

    #[test]
    fn csv_is_deterministic() {
        let cfg = BenchConfig {
            instances: 5,
            ..Default::default()
        };
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_bench_csv(&mut a, &cluster_bench(&cfg).unwrap()).unwrap();
        write_bench_csv(&mut b, &cluster_bench(&cfg).unwrap()).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert_eq!(text.lines().count(), 1 + 10 + 2);
    }

    #[test]
    fn perfect_centroids_have_zero_error() {
        let (_, ideal) = bench_instance(&BenchConfig::default(), 0);
        let mut swapped = Tensor::zeros(2, ideal.cols());
        for l in 0..2 {
            for j in 0..ideal.cols() {
                swapped.set(1 - l, j, ideal.get(l, j));
            }
        }
        let (c, e) = attractor_errors(&swapped, &ideal);
        assert!(c.abs() < 1e-12 && e.abs() < 1e-12);
    }
}
