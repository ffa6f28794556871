//! Posterior-mean denoisers `d(x, σ) ≈ E[x0 | x_σ = x]`.
//!
//! Samplers and projections only need the denoised value and vector-Jacobian
//! products with respect to the input, which is what [`Denoiser`] exposes.
//! Besides the trained network this module provides closed-form denoisers
//! used as oracles.

use crate::cloud::PointCloud;
use crate::error::{check_dim, check_finite, Error, Result};

pub trait Denoiser: Sync {
    fn dim(&self) -> usize;

    fn denoise(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>>;

    /// Evaluates `d(x, σ)`, asks `upstream` for the cotangent at that output,
    /// and returns `(d(x, σ), upstreamᵀ ∂d/∂x)`.
    fn denoise_pullback(
        &self,
        x: &[f64],
        sigma: f64,
        upstream: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<(Vec<f64>, Vec<f64>)>;

    /// Vector-Jacobian product `upstreamᵀ ∂d/∂x`.
    fn grad_input(&self, x: &[f64], sigma: f64, upstream: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), upstream.len())?;
        check_finite(upstream, "upstream")?;
        let (_, g) = self.denoise_pullback(x, sigma, &mut |_| Ok(upstream.to_vec()))?;
        Ok(g)
    }

    fn denoise_cloud(&self, cloud: &PointCloud, sigma: f64) -> Result<PointCloud> {
        let mut out = Vec::with_capacity(cloud.as_slice().len());
        for row in cloud.rows() {
            out.extend(self.denoise(row, sigma)?);
        }
        PointCloud::new(cloud.dim(), out)
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma >= 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::Input(format!("invalid noise level {sigma}")))
    }
}

/// `d(x, σ) = x`. Useful for testing projections in isolation.
#[derive(Debug, Clone)]
pub struct IdentityDenoiser {
    pub dim: usize,
}

impl Denoiser for IdentityDenoiser {
    fn dim(&self) -> usize {
        self.dim
    }

    fn denoise(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        check_sigma(sigma)?;
        Ok(x.to_vec())
    }

    fn denoise_pullback(
        &self,
        x: &[f64],
        sigma: f64,
        upstream: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let d = self.denoise(x, sigma)?;
        let g = upstream(&d)?;
        check_dim(self.dim, g.len())?;
        Ok((d, g))
    }
}

/// Exact denoiser for data `N(mean, diag(var))`.
#[derive(Debug, Clone)]
pub struct GaussianDenoiser {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl GaussianDenoiser {
    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
        }
    }

    pub fn isotropic(mean: Vec<f64>, var: f64) -> Self {
        let n = mean.len();
        Self {
            mean,
            var: vec![var; n],
        }
    }

    fn gain(&self, i: usize, sigma: f64) -> f64 {
        self.var[i] / (self.var[i] + sigma * sigma)
    }
}

impl Denoiser for GaussianDenoiser {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn denoise(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        check_sigma(sigma)?;
        Ok(x.iter()
            .enumerate()
            .map(|(i, &xi)| {
                let k = self.gain(i, sigma);
                k * xi + (1.0 - k) * self.mean[i]
            })
            .collect())
    }

    fn denoise_pullback(
        &self,
        x: &[f64],
        sigma: f64,
        upstream: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let d = self.denoise(x, sigma)?;
        let mut g = upstream(&d)?;
        check_dim(self.dim(), g.len())?;
        for (i, gi) in g.iter_mut().enumerate() {
            *gi *= self.gain(i, sigma);
        }
        Ok((d, g))
    }
}

impl<T: Denoiser + ?Sized> Denoiser for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn denoise(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        (**self).denoise(x, sigma)
    }
    fn denoise_pullback(
        &self,
        x: &[f64],
        sigma: f64,
        upstream: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        (**self).denoise_pullback(x, sigma, upstream)
    }
    fn denoise_cloud(&self, cloud: &PointCloud, sigma: f64) -> Result<PointCloud> {
        (**self).denoise_cloud(cloud, sigma)
    }
}
