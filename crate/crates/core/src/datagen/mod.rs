//! Training data: two-dimensional toy laws and Kuramoto–Sivashinsky
//! trajectories.
//!
//! The 2-D samplers return standardized clouds. Standardization statistics
//! come from a fixed-seed pre-pass of [`STANDARDIZATION_DRAWS`] samples of
//! the raw law, so every split of a given parameter set shares them.

mod ks;

pub use ks::{
    augment_ks, block_average, ks_initial_condition, ks_solve, prepare_ks_dataset, spectral_derivative, KsDataset,
    KsParams, KsSolver, Trajectory,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{PointCloud, Standardizer};
use crate::error::{Error, Result};
use crate::rng;

pub const STANDARDIZATION_DRAWS: usize = 100_000;
const STANDARDIZATION_SEED: u64 = 0x5eed_57d;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkerboard2D {
    pub grid_size: usize,
    #[serde(default)]
    pub jitter: f64,
}

impl Default for Checkerboard2D {
    fn default() -> Self {
        Self {
            grid_size: 4,
            jitter: 0.0,
        }
    }
}

impl Checkerboard2D {
    fn validate(&self) -> Result<()> {
        if self.grid_size < 1 {
            return Err(Error::Config("checkerboard grid size must be at least 1".into()));
        }
        if !(self.jitter >= 0.0) {
            return Err(Error::Config("checkerboard jitter must be nonnegative".into()));
        }
        Ok(())
    }

    /// Draws `n` points of the raw (unstandardized) law.
    pub fn sample_raw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<PointCloud> {
        self.validate()?;
        let m = self.grid_size;
        let mut data = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let i = rng.random_range(0..m);
            // columns j in 0..m with (i + j) even
            let allowed = (m + 1 - i % 2) / 2;
            let j = 2 * rng.random_range(0..allowed) + i % 2;
            let u1: f64 = rng.random();
            let u2: f64 = rng.random();
            let mut x = [i as f64 + u1, j as f64 + u2];
            if self.jitter > 0.0 {
                x[0] += self.jitter * rng::normal(rng);
                x[1] += self.jitter * rng::normal(rng);
            }
            data.extend(x);
        }
        PointCloud::new(2, data)
    }

    pub fn standardizer(&self) -> Result<Standardizer> {
        let pre = self.sample_raw(STANDARDIZATION_DRAWS, &mut rng::seeded(STANDARDIZATION_SEED))?;
        Ok(Standardizer::fit(&pre))
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<PointCloud> {
        if n == 0 {
            return Err(Error::Input("sample count must be positive".into()));
        }
        let mut cloud = self.sample_raw(n, rng)?;
        self.standardizer()?.apply(&mut cloud);
        Ok(cloud)
    }
}

/// Gaussian mixture with a quadratic shear `x2 = z2 + b (z1² - E[z1²])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BananaGmm {
    pub weights: Vec<f64>,
    pub means: Vec<[f64; 2]>,
    pub stds: Vec<[f64; 2]>,
    pub curvature: f64,
}

impl Default for BananaGmm {
    fn default() -> Self {
        Self {
            weights: vec![0.4, 0.3, 0.3],
            means: vec![[0.0, 0.0], [-1.5, 0.5], [1.5, 0.5]],
            stds: vec![[0.5, 0.25], [0.3, 0.3], [0.3, 0.3]],
            curvature: 0.6,
        }
    }
}

impl BananaGmm {
    fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 || self.means.len() != k || self.stds.len() != k {
            return Err(Error::Config("mixture needs matching nonempty weights, means and stds".into()));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("mixture weights must be nonnegative and sum to 1".into()));
        }
        if self.stds.iter().flatten().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("component stds must be positive".into()));
        }
        if !self.curvature.is_finite() {
            return Err(Error::Config("curvature must be finite".into()));
        }
        Ok(())
    }

    /// `E[z1²]` under the mixture.
    pub fn second_moment_z1(&self) -> f64 {
        self.weights
            .iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(w, (m, s))| w * (m[0] * m[0] + s[0] * s[0]))
            .sum()
    }

    fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return k;
            }
        }
        // rounding in the cumulative sum; fall back to the last positive weight
        self.weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
    }

    /// Raw draws together with the component index of each point.
    pub fn sample_labeled<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<(PointCloud, Vec<usize>)> {
        self.validate()?;
        let ez = self.second_moment_z1();
        let mut data = Vec::with_capacity(2 * n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let k = self.pick(rng);
            let z1 = self.means[k][0] + self.stds[k][0] * rng::normal(rng);
            let z2 = self.means[k][1] + self.stds[k][1] * rng::normal(rng);
            data.extend([z1, z2 + self.curvature * (z1 * z1 - ez)]);
            labels.push(k);
        }
        Ok((PointCloud::new(2, data)?, labels))
    }

    pub fn sample_raw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<PointCloud> {
        Ok(self.sample_labeled(n, rng)?.0)
    }

    pub fn standardizer(&self) -> Result<Standardizer> {
        let pre = self.sample_raw(STANDARDIZATION_DRAWS, &mut rng::seeded(STANDARDIZATION_SEED))?;
        Ok(Standardizer::fit(&pre))
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<PointCloud> {
        if n == 0 {
            return Err(Error::Input("sample count must be positive".into()));
        }
        let mut cloud = self.sample_raw(n, rng)?;
        self.standardizer()?.apply(&mut cloud);
        Ok(cloud)
    }
}

/// A named 2-D training law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Data2D {
    Checkerboard(Checkerboard2D),
    Banana(BananaGmm),
}

impl Data2D {
    pub fn name(&self) -> &'static str {
        match self {
            Data2D::Checkerboard(_) => "checkerboard",
            Data2D::Banana(_) => "banana",
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<PointCloud> {
        match self {
            Data2D::Checkerboard(c) => c.sample(n, rng),
            Data2D::Banana(b) => b.sample(n, rng),
        }
    }
}
