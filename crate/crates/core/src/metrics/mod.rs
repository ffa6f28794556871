//! Evaluation metrics: distributional distances between point clouds,
//! constraint-violation summaries and ensemble verification scores.

mod continuity;
mod ensemble;
mod knn;
mod sinkhorn;
mod violation;

pub use continuity::{continuity_norms, ContinuityScore};
pub use ensemble::{ensemble_scores, EnsembleScores};
pub use knn::{knn_cross_edge_rate, CrossEdgeParams};
pub use sinkhorn::{entropic_ot, entropic_ot_self, median_sq_distance, sinkhorn_divergence, SinkhornParams, SinkhornResult};
pub use violation::{quantile, violation_stats, violation_stats_from_values, LogHistogram, ViolationStats, VIOLATION_FLOOR};

use serde::{Deserialize, Serialize};

/// Distributional comparison of a sample cloud against a reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionScore {
    pub sinkhorn: f64,
    pub sinkhorn_eps: f64,
    pub cross_edge_rate: f64,
    pub k: usize,
    pub subsample_size: usize,
    pub repeats: usize,
}
