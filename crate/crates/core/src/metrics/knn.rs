//! k-nearest-neighbour two-sample statistic.
//!
//! Both clouds are pooled, every point contributes directed edges to its `k`
//! nearest neighbours (Euclidean, excluding itself), and the statistic is
//! the fraction of edges joining points from different clouds. It is about
//! one half when the clouds come from the same law and near zero when they
//! are well separated.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossEdgeParams {
    pub k: usize,
    pub subsample: usize,
    pub repeats: usize,
}

impl Default for CrossEdgeParams {
    fn default() -> Self {
        Self {
            k: 5,
            subsample: 4096,
            repeats: 10,
        }
    }
}

fn cross_edges(points: &[&[f64]], n_first: usize, k: usize) -> usize {
    let n = points.len();
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    let mut cross = 0;
    for i in 0..n {
        best.clear();
        let pi = points[i];
        for (j, pj) in points.iter().enumerate() {
            if j == i {
                continue;
            }
            let mut d = 0.0;
            for (a, b) in pi.iter().zip(pj.iter()) {
                d += (a - b) * (a - b);
            }
            if best.len() == k && d >= best[k - 1].0 {
                continue;
            }
            let pos = best.partition_point(|&(bd, _)| bd <= d);
            best.insert(pos, (d, j));
            best.truncate(k);
        }
        let side = i < n_first;
        cross += best.iter().filter(|&&(_, j)| (j < n_first) != side).count();
    }
    cross
}

/// Mean cross-edge rate over `repeats` random subsamples of size
/// `subsample` drawn without replacement from each cloud.
pub fn knn_cross_edge_rate<R: Rng + ?Sized>(
    a: &PointCloud,
    b: &PointCloud,
    params: &CrossEdgeParams,
    rng: &mut R,
) -> Result<f64> {
    check_dim(a.dim(), b.dim())?;
    let CrossEdgeParams { k, subsample, repeats } = *params;
    if k == 0 || repeats == 0 {
        return Err(Error::Config("k and repeats must be positive".into()));
    }
    let need = subsample.max(k + 1);
    let have = a.len().min(b.len());
    if have < need || subsample < k + 1 {
        return Err(Error::InsufficientPoints { need, have });
    }
    let mut total = 0.0;
    for _ in 0..repeats {
        let ia = sample(rng, a.len(), subsample);
        let ib = sample(rng, b.len(), subsample);
        let mut pts: Vec<&[f64]> = ia.iter().map(|i| a.row(i)).collect();
        pts.extend(ib.iter().map(|i| b.row(i)));
        let cross = cross_edges(&pts, subsample, k);
        total += cross as f64 / (2 * subsample * k) as f64;
    }
    Ok(total / repeats as f64)
}
