//! Attractors, masks and losses on the tape.

use super::ModelError;
use crate::clustering::Metric;
use crate::diffcore::{Tape, Tensor, Var};
use crate::dsp::{DspError, MaskSet};
use crate::perm::permutations;

/// Largest `k` accepted by the permutation-invariant loss.
pub const PIT_MAX_K: usize = 6;

/// Dominance indicators `u_l` and the high-energy indicator `e`.
#[derive(Debug, Clone, PartialEq)]
pub struct DominanceIndicators {
    pub u: Vec<Vec<bool>>,
    pub e: Vec<bool>,
}

impl DominanceIndicators {
    pub fn new(u: Vec<Vec<bool>>, e: Vec<bool>) -> Result<Self, ModelError> {
        let n = e.len();
        if u.is_empty() || u.iter().any(|ul| ul.len() != n) {
            return Err(ModelError::Shape("indicator lengths differ".into()));
        }
        for i in 0..n {
            if u.iter().filter(|ul| ul[i]).count() != 1 {
                return Err(ModelError::Shape(format!("bin {i} is not dominated by exactly one source")));
            }
        }
        Ok(Self { u, e })
    }

    pub fn k(&self) -> usize {
        self.u.len()
    }

    /// Dominant source index of every bin.
    pub fn labels(&self) -> Vec<usize> {
        (0..self.e.len())
            .map(|i| self.u.iter().position(|ul| ul[i]).unwrap_or(0))
            .collect()
    }

    /// `1ᵀ(u_l∘e)` for every source.
    pub fn counts(&self) -> Vec<usize> {
        self.u
            .iter()
            .map(|ul| ul.iter().zip(&self.e).filter(|(a, b)| **a && **b).count())
            .collect()
    }
}

/// `u_l[i]` is set when source `l` has the largest magnitude at bin `i`;
/// ties go to the lowest index.
pub fn dominance(sources: &[&[f64]]) -> Result<Vec<Vec<bool>>, ModelError> {
    let Some(first) = sources.first() else {
        return Err(ModelError::Shape("dominance needs at least one source".into()));
    };
    let n = first.len();
    if sources.iter().any(|s| s.len() != n) {
        return Err(ModelError::Shape("source spectrograms differ in size".into()));
    }
    let mut u = vec![vec![false; n]; sources.len()];
    for i in 0..n {
        let mut best = 0;
        for l in 1..sources.len() {
            if sources[l][i] > sources[best][i] {
                best = l;
            }
        }
        u[best][i] = true;
    }
    Ok(u)
}

/// Mean embedding over the high-energy bins dominated by each source, `k×D`.
pub fn ground_truth_attractors(tape: &mut Tape, v: Var, ind: &DominanceIndicators) -> Result<Var, ModelError> {
    let rows = tape.shape(v)[0];
    if ind.e.len() != rows {
        return Err(ModelError::Shape(format!("{} indicator bins for {rows} embeddings", ind.e.len())));
    }
    let counts = ind.counts();
    if let Some(l) = counts.iter().position(|&c| c == 0) {
        return Err(ModelError::DegenerateBatch(format!(
            "source {} dominates no high-energy bin",
            l + 1
        )));
    }
    let w: Vec<f64> = ind.e.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    Ok(tape.segment_mean(v, &ind.labels(), &w, ind.k())?)
}

/// Per-bin softmax over the attractor logits `V·a_l`; result is `TF×k`.
pub fn danet_masks(tape: &mut Tape, v: Var, attractors: Var) -> Result<Var, ModelError> {
    let at = tape.transpose(attractors);
    let logits = tape.matmul(v, at)?;
    Ok(tape.softmax_rows(logits))
}

/// Masks from clustered centroids: `softmax(−‖v − c_l‖/τ)` for the Euclidean
/// metric and `softmax(vᵀc_l)` for the spherical one.
pub fn kmeans_masks(
    tape: &mut Tape,
    v: Var,
    centroids: Var,
    metric: Metric,
    temperature: f64,
) -> Result<Var, ModelError> {
    match metric {
        Metric::Euclidean => {
            if !(temperature > 0.0) {
                return Err(ModelError::Config("temperature must be positive".into()));
            }
            let d = tape.row_distances(v, centroids)?;
            let s = tape.scale(d, -1.0 / temperature);
            Ok(tape.softmax_rows(s))
        }
        Metric::Spherical => danet_masks(tape, v, centroids),
    }
}

/// Converts `TF×k` mask values to a validated [`MaskSet`].
pub fn mask_set(masks: &Tensor, frames: usize, bins: usize) -> Result<MaskSet, DspError> {
    MaskSet::from_bin_major(frames, bins, masks.cols(), masks.data())
}

fn check_loss_inputs(tape: &Tape, masks: Var, mix: &[f64], sources: &[&[f64]]) -> Result<(usize, usize), ModelError> {
    let [n, k] = tape.shape(masks);
    if mix.len() != n || sources.len() != k || sources.iter().any(|s| s.len() != n) {
        return Err(ModelError::Shape(format!(
            "masks {n}x{k}, mixture {} bins, {} sources",
            mix.len(),
            sources.len()
        )));
    }
    Ok((n, k))
}

/// `1/(kTF) Σ_l ‖S_l − X∘M_l‖²` with mask column `l` paired to `sources[l]`.
pub fn mse_loss(tape: &mut Tape, masks: Var, mix: &[f64], sources: &[&[f64]]) -> Result<Var, ModelError> {
    let (n, k) = check_loss_inputs(tape, masks, mix, sources)?;
    let mut x = Vec::with_capacity(n * k);
    let mut s = Vec::with_capacity(n * k);
    for i in 0..n {
        for src in sources {
            x.push(mix[i]);
            s.push(src[i]);
        }
    }
    let x = tape.constant(Tensor::new(n, k, x)?);
    let s = tape.constant(Tensor::new(n, k, s)?);
    let est = tape.mul(x, masks)?;
    let r = tape.sub(est, s)?;
    let sq = tape.square(r);
    let total = tape.sum(sq);
    Ok(tape.scale(total, 1.0 / (n * k) as f64))
}

/// Value of [`mse_loss`] with mask `l` paired to `sources[perm[l]]`.
pub fn mse_value(masks: &Tensor, mix: &[f64], sources: &[&[f64]], perm: &[usize]) -> f64 {
    let (n, k) = (masks.rows(), masks.cols());
    let m = masks.data();
    let mut total = 0.0;
    for i in 0..n {
        for l in 0..k {
            let r = mix[i] * m[i * k + l] - sources[perm[l]][i];
            total += r * r;
        }
    }
    total / (n * k) as f64
}

/// Minimum of [`mse_loss`] over all pairings of masks and sources. Only the
/// winning pairing is placed on the tape. The returned permutation maps mask
/// `l` to source `perm[l]`; ties keep the lexicographically first one.
pub fn pit_loss(tape: &mut Tape, masks: Var, mix: &[f64], sources: &[&[f64]]) -> Result<(Var, Vec<usize>), ModelError> {
    let (_, k) = check_loss_inputs(tape, masks, mix, sources)?;
    if k > PIT_MAX_K {
        return Err(ModelError::Unsupported(format!(
            "permutation-invariant loss supports k <= {PIT_MAX_K}, got {k}"
        )));
    }
    let mv = tape.value(masks);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for p in permutations(k) {
        let e = mse_value(mv, mix, sources, &p);
        if best.as_ref().is_none_or(|(b, _)| e < *b) {
            best = Some((e, p));
        }
    }
    let (_, perm) = best.expect("at least one permutation");
    let ordered: Vec<&[f64]> = perm.iter().map(|&j| sources[j]).collect();
    let loss = mse_loss(tape, masks, mix, &ordered)?;
    Ok((loss, perm))
}
