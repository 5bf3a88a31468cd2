use super::{assign, check_inputs, gather_rows, init_indices, reseed_empty, ClusterConfig, ClusterError, Metric};
use crate::diffcore::{Tape, Var};

/// Centroids produced on the tape plus the (constant) final assignment.
#[derive(Debug, Clone)]
pub struct UnfoldedClusters {
    pub centroids: Var,
    pub assignments: Vec<usize>,
}

/// Runs exactly `cfg.iterations` k-means iterations inside the tape.
///
/// Assignments are computed from stop-gradient centroids and enter the graph
/// only as constant selections, so gradients reach `v` through the centroid
/// updates (and, in spherical mode, the row normalization and the final
/// un-normalized recomputation). The forward values are bitwise identical to
/// [`super::kmeans`] with the same config.
pub fn unfolded_kmeans_layer(
    tape: &mut Tape,
    v: Var,
    weights: &[f64],
    cfg: &ClusterConfig,
) -> Result<UnfoldedClusters, ClusterError> {
    check_inputs(tape.value(v), weights, cfg)?;
    let k = cfg.k;
    let w = cfg.effective_weights(weights);
    let work = match cfg.metric {
        Metric::Euclidean => v,
        Metric::Spherical => tape.normalize_rows(v),
    };
    let init = init_indices(tape.value(work), &w, cfg)?;
    let mut centroids = tape.constant(gather_rows(tape.value(work), &init));
    let mut assignments = Vec::new();
    for _ in 0..cfg.iterations {
        let frozen = tape.stop_gradient(centroids);
        let mut next = assign(cfg.metric, tape.value(work), tape.value(frozen));
        reseed_empty(cfg.metric, tape.value(work), &w, tape.value(frozen), &mut next, k);
        assignments = next;
        let means = tape.segment_mean(work, &assignments, &w, k)?;
        centroids = match cfg.metric {
            Metric::Euclidean => means,
            Metric::Spherical => tape.normalize_rows(means),
        };
    }
    if cfg.metric == Metric::Spherical {
        centroids = tape.segment_mean(v, &assignments, &cfg.final_weights(weights), k)?;
    }
    Ok(UnfoldedClusters {
        centroids,
        assignments,
    })
}
