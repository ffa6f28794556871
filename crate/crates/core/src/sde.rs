//! Variance-exploding forward process.
//!
//! The forward kernel is `p(x_t | x_0) = N(x_0, σ_t² I)` with zero drift, so
//! marginals at any noise level are obtained by adding isotropic Gaussian
//! noise to clean samples.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{check_finite, Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Spacing {
    /// Geometric spacing between `sigma_min` and `sigma_max`.
    LogLinear,
    /// Karras et al. spacing with exponent `rho`.
    EdmRho { rho: f64 },
}

impl Default for Spacing {
    fn default() -> Self {
        Spacing::LogLinear
    }
}

/// Discrete noise levels `σ(0) = 0 < σ(1) = sigma_min < … < σ(T) = sigma_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub num_steps: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    #[serde(default)]
    pub spacing: Spacing,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            num_steps: 64,
            sigma_min: 0.01,
            sigma_max: 10.0,
            spacing: Spacing::LogLinear,
        }
    }
}

impl NoiseSchedule {
    pub fn new(num_steps: usize, sigma_min: f64, sigma_max: f64, spacing: Spacing) -> Result<Self> {
        let s = Self {
            num_steps,
            sigma_min,
            sigma_max,
            spacing,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn log_linear(num_steps: usize, sigma_min: f64, sigma_max: f64) -> Result<Self> {
        Self::new(num_steps, sigma_min, sigma_max, Spacing::LogLinear)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_steps == 0 {
            return Err(Error::Config("num_steps must be positive".into()));
        }
        if !(self.sigma_min.is_finite() && self.sigma_max.is_finite())
            || self.sigma_min <= 0.0
            || self.sigma_min >= self.sigma_max
        {
            return Err(Error::Config(format!(
                "need 0 < sigma_min < sigma_max < inf, got [{}, {}]",
                self.sigma_min, self.sigma_max
            )));
        }
        if let Spacing::EdmRho { rho } = self.spacing {
            if !(rho.is_finite() && rho > 0.0) {
                return Err(Error::Config(format!("rho must be positive, got {rho}")));
            }
        }
        Ok(())
    }

    pub fn sigma_at(&self, step: usize) -> Result<f64> {
        if step > self.num_steps {
            return Err(Error::Range {
                index: step,
                max: self.num_steps,
            });
        }
        if step == 0 {
            return Ok(0.0);
        }
        if step == self.num_steps {
            return Ok(self.sigma_max);
        }
        if step == 1 {
            return Ok(self.sigma_min);
        }
        // fraction of the way from step 1 to step T
        let u = (step - 1) as f64 / (self.num_steps - 1) as f64;
        Ok(match self.spacing {
            Spacing::LogLinear => {
                let (a, b) = (self.sigma_min.ln(), self.sigma_max.ln());
                (a + u * (b - a)).exp()
            }
            Spacing::EdmRho { rho } => {
                let a = self.sigma_min.powf(1.0 / rho);
                let b = self.sigma_max.powf(1.0 / rho);
                (a + u * (b - a)).powf(rho)
            }
        })
    }

    /// All levels `σ(0..=T)`.
    pub fn sigmas(&self) -> Vec<f64> {
        (0..=self.num_steps)
            .map(|i| self.sigma_at(i).expect("index in range"))
            .collect()
    }

    /// Step whose σ is closest to `sigma` in log space (step 0 only for σ = 0).
    pub fn nearest_step(&self, sigma: f64) -> usize {
        if sigma <= 0.0 {
            return 0;
        }
        let mut best = (1, f64::INFINITY);
        for i in 1..=self.num_steps {
            let d = (self.sigma_at(i).unwrap().ln() - sigma.ln()).abs();
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }
}

/// Free-function form of [`NoiseSchedule::sigma_at`].
pub fn sigma_at(schedule: &NoiseSchedule, step: usize) -> Result<f64> {
    schedule.sigma_at(step)
}

/// A point on the reverse trajectory together with its noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState {
    pub x: Vec<f64>,
    pub step: usize,
    pub sigma: f64,
}

impl DiffusionState {
    pub fn new(x: Vec<f64>, step: usize, schedule: &NoiseSchedule) -> Result<Self> {
        check_finite(&x, "state")?;
        let sigma = schedule.sigma_at(step)?;
        Ok(Self { x, step, sigma })
    }
}

/// Draw from `N(x0, σ² I)`.
pub fn forward_kernel_sample<R: Rng + ?Sized>(x0: &[f64], sigma: f64, rng: &mut R) -> Result<Vec<f64>> {
    check_finite(x0, "x0")?;
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Input(format!("sigma must be finite and nonnegative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(x0.to_vec());
    }
    let mut noise = rng::normal_vec(rng, x0.len());
    Ok(forward_kernel_with_noise(x0, sigma, &mut noise))
}

/// `x0 + σ ξ` for a given `ξ`; the buffer is reused for the result.
pub fn forward_kernel_with_noise(x0: &[f64], sigma: f64, noise: &mut [f64]) -> Vec<f64> {
    noise
        .iter()
        .zip(x0)
        .map(|(xi, x)| x + sigma * xi)
        .collect()
}

/// Score implied by a denoiser output: `(x̂0 - x) / σ²`.
pub fn tweedie_score(x: &[f64], x0_hat: &[f64], sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::ZeroSigma(sigma));
    }
    if x.len() != x0_hat.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            got: x0_hat.len(),
        });
    }
    let s2 = sigma * sigma;
    Ok(x.iter().zip(x0_hat).map(|(x, d)| (d - x) / s2).collect())
}

/// Push every row of `cloud0` through the forward kernel at level `sigma`.
pub fn marginal_cloud<R: Rng + ?Sized>(cloud0: &PointCloud, sigma: f64, rng: &mut R) -> Result<PointCloud> {
    if cloud0.is_empty() {
        return Err(Error::Input("empty point cloud".into()));
    }
    let mut out = Vec::with_capacity(cloud0.as_slice().len());
    for row in cloud0.rows() {
        out.extend(forward_kernel_sample(row, sigma, rng)?);
    }
    PointCloud::new(cloud0.dim(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn default_schedule() -> NoiseSchedule {
        NoiseSchedule::log_linear(64, 0.01, 10.0).unwrap()
    }

    #[test]
    fn endpoints() {
        let s = default_schedule();
        assert_eq!(s.sigma_at(0).unwrap(), 0.0);
        assert_eq!(s.sigma_at(1).unwrap(), 0.01);
        assert_eq!(s.sigma_at(64).unwrap(), 10.0);
        assert!(matches!(s.sigma_at(65), Err(Error::Range { index: 65, max: 64 })));
    }

    #[test]
    fn log_linear_midpoint_is_geometric_mean() {
        // With σ(1) = σ_min and σ(64) = σ_max the geometric midpoint falls
        // between steps 32 and 33.
        let s = default_schedule();
        let mid = (0.01f64 * 10.0).sqrt();
        let (a, b) = (s.sigma_at(32).unwrap(), s.sigma_at(33).unwrap());
        assert!((a * b).sqrt() - mid < 1e-12);
        assert!(a < mid && mid < b);
        assert!((a - mid).abs() / mid < 0.06);
    }

    #[test]
    fn edm_spacing_is_monotone() {
        let s = NoiseSchedule::new(20, 0.002, 80.0, Spacing::EdmRho { rho: 7.0 }).unwrap();
        let sig = s.sigmas();
        assert!(sig.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(sig[20], 80.0);
    }

    #[test]
    fn invalid_schedules() {
        assert!(NoiseSchedule::log_linear(0, 0.01, 1.0).is_err());
        assert!(NoiseSchedule::log_linear(4, 1.0, 1.0).is_err());
        assert!(NoiseSchedule::log_linear(4, 0.0, 1.0).is_err());
        assert!(NoiseSchedule::log_linear(4, 0.1, f64::INFINITY).is_err());
    }

    #[test]
    fn kernel_identity_at_zero_noise() {
        let mut r = rng::seeded(0);
        assert_eq!(forward_kernel_sample(&[1.0, 2.0], 0.0, &mut r).unwrap(), vec![1.0, 2.0]);
        assert_eq!(forward_kernel_with_noise(&[3.0], 2.0, &mut [-1.0]), vec![1.0]);
        assert!(forward_kernel_sample(&[f64::NAN], 1.0, &mut r).is_err());
    }

    #[test]
    fn kernel_variance_monte_carlo() {
        let mut r = rng::seeded(1);
        let n = 100_000;
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        for _ in 0..n {
            let x = forward_kernel_sample(&[0.0, 0.0], 1.0, &mut r).unwrap();
            for k in 0..2 {
                sum[k] += x[k];
                sq[k] += x[k] * x[k];
            }
        }
        for k in 0..2 {
            let m = sum[k] / n as f64;
            let v = sq[k] / n as f64 - m * m;
            assert!((v - 1.0).abs() < 0.02, "var {v}");
        }
    }

    #[test]
    fn kernel_composition() {
        let (s1, s2) = (0.7f64, 1.3f64);
        let n = 100_000;
        let mut r = rng::seeded(2);
        let direct: Vec<f64> = (0..n)
            .map(|_| forward_kernel_sample(&[0.5], (s1 * s1 + s2 * s2).sqrt(), &mut r).unwrap()[0])
            .collect();
        let composed: Vec<f64> = (0..n)
            .map(|_| {
                let a = forward_kernel_sample(&[0.5], s1, &mut r).unwrap();
                forward_kernel_sample(&a, s2, &mut r).unwrap()[0]
            })
            .collect();
        let stats = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
            (m, var)
        };
        let (m1, v1) = stats(&direct);
        let (m2, v2) = stats(&composed);
        let var = s1 * s1 + s2 * s2;
        let se_mean = (2.0 * var / n as f64).sqrt();
        let se_var = (2.0 * 2.0 * var * var / (n - 1) as f64).sqrt();
        assert!((m1 - m2).abs() < 3.0 * se_mean);
        assert!((v1 - v2).abs() < 3.0 * se_var);
    }

    #[test]
    fn tweedie_examples() {
        assert_eq!(tweedie_score(&[1.0, 1.0], &[1.0, 1.0], 0.5).unwrap(), vec![0.0, 0.0]);
        assert_eq!(tweedie_score(&[2.0], &[0.0], 1.0).unwrap(), vec![-2.0]);
        assert_eq!(tweedie_score(&[0.0], &[1.0], 2.0).unwrap(), vec![0.25]);
        assert!(matches!(tweedie_score(&[0.0], &[0.0], 0.0), Err(Error::ZeroSigma(_))));
    }

    #[test]
    fn marginal_cloud_examples() {
        let mut r = rng::seeded(3);
        let c = PointCloud::from_rows(2, [[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(marginal_cloud(&c, 0.0, &mut r).unwrap(), c);
        assert!(marginal_cloud(&PointCloud::zeros(0, 2), 1.0, &mut r).is_err());

        let single = PointCloud::zeros(100_000, 2);
        let out = marginal_cloud(&single, 3.0, &mut r).unwrap();
        assert_eq!(out.len(), 100_000);
        let cov = out.covariance();
        assert!((cov[0] - 9.0).abs() / 9.0 < 0.03);
        assert!((cov[3] - 9.0).abs() / 9.0 < 0.03);
        assert!(cov[1].abs() < 0.27);
        let m = out.mean();
        assert!(m.iter().all(|v| v.abs() < 0.05));
    }

    proptest! {
        #[test]
        fn schedule_strictly_increasing(
            steps in 2usize..200,
            lo in 1e-4f64..1.0,
            ratio in 1.5f64..1e4,
            rho in 1.0f64..10.0,
            edm in any::<bool>(),
        ) {
            let spacing = if edm { Spacing::EdmRho { rho } } else { Spacing::LogLinear };
            let s = NoiseSchedule::new(steps, lo, lo * ratio, spacing).unwrap();
            let sig = s.sigmas();
            prop_assert_eq!(sig[0], 0.0);
            prop_assert!((sig[1] - lo).abs() <= 1e-12 * lo);
            for w in sig.windows(2) {
                prop_assert!(w[0] < w[1]);
            }
        }

        #[test]
        fn gaussian_tweedie_matches_exact_score(
            mu in -3.0f64..3.0, s in 0.1f64..3.0, sigma in 0.01f64..10.0, x in -10.0f64..10.0,
        ) {
            let (s2, sg2) = (s * s, sigma * sigma);
            let d = (s2 * x + sg2 * mu) / (s2 + sg2);
            let score = tweedie_score(&[x], &[d], sigma).unwrap()[0];
            let exact = -(x - mu) / (s2 + sg2);
            // rounding in d and x is amplified by 1/σ²
            prop_assert!((score - exact).abs() <= 1e-13 * (1.0 + x.abs() + mu.abs()) / sg2);
        }
    }
}
