use serde::{Deserialize, Serialize};

use super::{kmeans, ClusterConfig, ClusterError, Init, Metric, Weighting};
use crate::diffcore::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    GroundTruth,
    Kmeans,
    Fixed,
}

/// `k` attractor vectors in embedding space (one per row).
#[derive(Debug, Clone, PartialEq)]
pub struct AttractorSet {
    pub vectors: Tensor,
    pub provenance: Provenance,
}

impl AttractorSet {
    pub fn new(vectors: Tensor, provenance: Provenance) -> Result<Self, ClusterError> {
        if vectors.rows() == 0 {
            return Err(ClusterError::InvalidConfig("attractor set needs k >= 1".into()));
        }
        if !vectors.all_finite() {
            return Err(ClusterError::InvalidConfig("attractors must be finite".into()));
        }
        Ok(Self { vectors, provenance })
    }

    pub fn k(&self) -> usize {
        self.vectors.rows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }
}

/// Fixed inference attractors: Euclidean k-means over every attractor
/// recorded during training.
pub fn fixed_attractors_from_training(history: &[AttractorSet], k: usize) -> Result<AttractorSet, ClusterError> {
    let Some(first) = history.first() else {
        return Err(ClusterError::InvalidConfig("attractor history is empty".into()));
    };
    let d = first.dim();
    let mut data = Vec::new();
    for a in history {
        if a.dim() != d {
            return Err(ClusterError::Shape(format!(
                "attractor dimension {} differs from {d}",
                a.dim()
            )));
        }
        data.extend_from_slice(a.vectors.data());
    }
    let n = data.len() / d.max(1);
    if n < k {
        return Err(ClusterError::DegenerateInput { k, distinct: n });
    }
    let points = Tensor::new(n, d, data)?;
    let cfg = ClusterConfig {
        k,
        metric: Metric::Euclidean,
        iterations: 100,
        weighting: Weighting::Uniform,
        seed: 0,
        init: Init::PlusPlus,
        ..Default::default()
    };
    let state = kmeans(&points, &vec![1.0; n], &cfg)?;
    AttractorSet::new(state.centroids, Provenance::Fixed)
}
