use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::constraints::Constraint;
use crate::error::{Error, Result};

/// Offset added before taking `log10` of violations.
pub const VIOLATION_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHistogram {
    /// Bin edges in `log10(c + floor)`.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationStats {
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub max: f64,
    pub mean: f64,
    pub histogram: LogHistogram,
}

/// Linear-interpolated quantile of sorted data (the usual "type 7" rule).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

pub fn violation_stats_from_values(values: &[f64]) -> Result<ViolationStats> {
    if values.is_empty() {
        return Err(Error::Input("no violation values".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    // 0.25-decade bins from log10(floor) = -6 up to 1; the outer bins
    // absorb anything beyond
    let (lo, hi, bins) = (VIOLATION_FLOOR.log10(), 1.0, 28);
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * width).collect();
    let mut counts = vec![0; bins];
    for &c in &v {
        let l = (c.max(0.0) + VIOLATION_FLOOR).log10();
        let b = (((l - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        counts[b] += 1;
    }
    Ok(ViolationStats {
        median: quantile(&v, 0.5),
        q25: quantile(&v, 0.25),
        q75: quantile(&v, 0.75),
        max: *v.last().unwrap(),
        mean: v.iter().sum::<f64>() / v.len() as f64,
        histogram: LogHistogram { edges, counts },
    })
}

pub fn violation_stats<C: Constraint + ?Sized>(cloud: &PointCloud, constraint: &C) -> Result<ViolationStats> {
    let values = cloud.rows().map(|r| constraint.eval(r)).collect::<Result<Vec<_>>>()?;
    violation_stats_from_values(&values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{NoConstraint, PointConstraint};

    #[test]
    fn all_feasible() {
        let cloud = PointCloud::zeros(10, 2);
        let s = violation_stats(&cloud, &NoConstraint { dim: 2 }).unwrap();
        assert_eq!(s.median, 0.0);
        assert_eq!(s.histogram.counts[0], 10);
        assert_eq!(s.histogram.edges[0], -6.0);
    }

    #[test]
    fn constant_violation() {
        // every point at squared distance 0.1 from the center
        let r = 0.1f64.sqrt();
        let cloud = PointCloud::from_rows(2, [[r, 0.0], [0.0, r], [-r, 0.0]]).unwrap();
        let s = violation_stats(&cloud, &PointConstraint { center: vec![0.0, 0.0] }).unwrap();
        for q in [s.median, s.q25, s.q75, s.max] {
            assert!((q - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn order_statistics_of_known_values() {
        let s = violation_stats_from_values(&[1e-1, 0.0, 1e-3]).unwrap();
        assert_eq!(s.median, 1e-3);
        assert_eq!(s.q25, 5e-4);
        assert_eq!(s.q75, 0.0505);
        assert_eq!(s.max, 0.1);
        assert_eq!(s.histogram.counts.iter().sum::<usize>(), 3);
        assert!(violation_stats_from_values(&[]).is_err());
    }
}
