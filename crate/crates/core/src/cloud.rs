use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `n × dim` matrix of samples stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    dim: usize,
    data: Vec<f64>,
}

impl PointCloud {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Input("point cloud dimension must be positive".into()));
        }
        if data.len() % dim != 0 {
            return Err(Error::Input(format!(
                "data length {} is not a multiple of dimension {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn zeros(n: usize, dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; n * dim],
        }
    }

    pub fn from_rows<I, R>(dim: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = R>,
        R: AsRef<[f64]>,
    {
        let mut data = Vec::new();
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(dim, data)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn rows_mut(&mut self) -> impl ExactSizeIterator<Item = &mut [f64]> {
        self.data.chunks_exact_mut(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn push(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: row.len(),
            });
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    /// Rows at the given indices, in order.
    pub fn select(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            dim: self.dim,
            data,
        }
    }

    pub fn truncate(&mut self, n: usize) {
        self.data.truncate(n * self.dim);
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for r in self.rows() {
            for (a, b) in m.iter_mut().zip(r) {
                *a += b;
            }
        }
        let n = self.len().max(1) as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Sample covariance (divides by n - 1), row-major `dim × dim`.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.dim;
        let m = self.mean();
        let mut c = vec![0.0; d * d];
        for r in self.rows() {
            for i in 0..d {
                let di = r[i] - m[i];
                for j in 0..d {
                    c[i * d + j] += di * (r[j] - m[j]);
                }
            }
        }
        let n = (self.len().max(2) - 1) as f64;
        c.iter_mut().for_each(|v| *v /= n);
        c
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Per-coordinate affine standardization `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(cloud: &PointCloud) -> Self {
        let mean = cloud.mean();
        let cov = cloud.covariance();
        let d = cloud.dim();
        let std = (0..d).map(|i| cov[i * d + i].sqrt().max(1e-12)).collect();
        Self { mean, std }
    }

    pub fn apply(&self, cloud: &mut PointCloud) {
        for r in cloud.rows_mut() {
            for ((v, m), s) in r.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
    }

    pub fn invert(&self, cloud: &mut PointCloud) {
        for r in cloud.rows_mut() {
            for ((v, m), s) in r.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = *v * s + m;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_ragged_data() {
        assert!(PointCloud::new(3, vec![0.0; 7]).is_err());
        assert!(PointCloud::new(0, vec![]).is_err());
    }

    #[test]
    fn covariance_of_known_points() {
        let c = PointCloud::from_rows(2, [[0.0, 0.0], [2.0, 2.0]]).unwrap();
        assert_eq!(c.mean(), vec![1.0, 1.0]);
        assert_eq!(c.covariance(), vec![2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn standardizer_round_trip() {
        let mut c = PointCloud::from_rows(2, [[1.0, 10.0], [3.0, 30.0], [5.0, 20.0]]).unwrap();
        let orig = c.clone();
        let s = Standardizer::fit(&c);
        s.apply(&mut c);
        let m = c.mean();
        assert!(m.iter().all(|v| v.abs() < 1e-12));
        s.invert(&mut c);
        for (a, b) in c.as_slice().iter().zip(orig.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
