use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms of consecutive-row differences of a time-major field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuityScore {
    pub mean_step_norm: f64,
    pub max_step_norm: f64,
}

/// `values` is `rows × cols` row-major; returns the mean and max over `i` of
/// `‖row_i - row_{i-1}‖₂`.
pub fn continuity_norms(values: &[f64], cols: usize) -> Result<ContinuityScore> {
    if cols == 0 || values.len() % cols != 0 {
        return Err(Error::Input("field length is not a multiple of the row width".into()));
    }
    let rows = values.len() / cols;
    if rows < 2 {
        return Err(Error::InsufficientPoints { need: 2, have: rows });
    }
    let norms: Vec<f64> = values
        .chunks_exact(cols)
        .zip(values.chunks_exact(cols).skip(1))
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (y - x).powi(2)).sum::<f64>().sqrt())
        .collect();
    Ok(ContinuityScore {
        mean_step_norm: norms.iter().sum::<f64>() / norms.len() as f64,
        max_step_norm: norms.iter().copied().fold(0.0, f64::max),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let c = continuity_norms(&[1.0, 2.0, 1.0, 2.0, 1.0, 2.0], 2).unwrap();
        assert_eq!((c.mean_step_norm, c.max_step_norm), (0.0, 0.0));
        let c = continuity_norms(&[0.0, 0.0, 3.0, 4.0], 2).unwrap();
        assert_eq!((c.mean_step_norm, c.max_step_norm), (5.0, 5.0));
        assert!(continuity_norms(&[1.0, 2.0], 2).is_err());
        let c = continuity_norms(&[0.0, 1.0, 3.0, 3.0], 1).unwrap();
        assert!(c.max_step_norm >= c.mean_step_norm);
    }
}
