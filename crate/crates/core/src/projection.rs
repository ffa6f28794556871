//! Projection of a noisy iterate through the denoiser onto the constraint
//! set, and the renoising kernel that follows it.
//!
//! [`project`] minimizes `c(d(x, σ)) + λ ‖x - x_t‖²` from `x_t`. The
//! gradient of the first term is the denoiser VJP applied to `∇c` at the
//! denoised point, so each objective evaluation costs one forward and one
//! backward pass.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::Constraint;
use crate::denoiser::Denoiser;
use crate::error::{check_dim, check_finite, Error, Result};
use crate::optim::{adam_minimize, lbfgs_minimize, AdamParams, LbfgsParams};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Lbfgs(LbfgsParams),
    Adam(AdamParams),
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Lbfgs(LbfgsParams::default())
    }
}

/// Penalty weight `λ` as a function of the step and its noise level.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LambdaSchedule {
    #[default]
    Zero,
    /// `t² / (4σ² + 4)` with the continuous time taken as `t = σ`.
    Data2d,
    /// One value per step index `0..=T`; indices past the end reuse the last.
    Custom { table: Vec<f64> },
}

impl LambdaSchedule {
    pub fn validate(&self) -> Result<()> {
        if let LambdaSchedule::Custom { table } = self {
            if table.is_empty() || table.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(Error::Config("custom lambda table must be nonempty, finite and nonnegative".into()));
            }
        }
        Ok(())
    }
}

pub fn lambda_at(schedule: &LambdaSchedule, step: usize, sigma: f64) -> f64 {
    match schedule {
        LambdaSchedule::Zero => 0.0,
        LambdaSchedule::Data2d => {
            let t = sigma;
            t * t / (4.0 * sigma * sigma + 4.0)
        }
        LambdaSchedule::Custom { table } => table.get(step).or(table.last()).copied().unwrap_or(0.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    #[serde(default)]
    pub optimizer: Optimizer,
    pub max_iters: usize,
    #[serde(default = "default_tol")]
    pub objective_tol: f64,
    #[serde(default)]
    pub lambda: LambdaSchedule,
}

fn default_tol() -> f64 {
    1e-10
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::default(),
            max_iters: 8,
            objective_tol: default_tol(),
            lambda: LambdaSchedule::Zero,
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("projection needs at least one iteration".into()));
        }
        if !(self.objective_tol >= 0.0) {
            return Err(Error::Config("objective tolerance must be nonnegative".into()));
        }
        if let Optimizer::Adam(p) = &self.optimizer {
            if !(p.lr > 0.0) {
                return Err(Error::Config("Adam learning rate must be positive".into()));
            }
        }
        self.lambda.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub x_star: Vec<f64>,
    /// `d(x_star, σ)`, the point the constraint was evaluated at.
    pub denoised: Vec<f64>,
    pub objective_value: f64,
    pub constraint_value: f64,
    pub iters_used: usize,
    pub converged: bool,
}

/// `c(d(x, σ)) + λ ‖x - x_t‖²` and its gradient.
pub fn projection_objective<D, C>(
    net: &D,
    constraint: &C,
    x_t: &[f64],
    sigma: f64,
    lambda: f64,
    x: &[f64],
) -> Result<(f64, Vec<f64>)>
where
    D: Denoiser + ?Sized,
    C: Constraint + ?Sized,
{
    let mut c_val = 0.0;
    let (_, mut g) = net.denoise_pullback(x, sigma, &mut |d| {
        let (v, gc) = constraint.eval_grad(d)?;
        c_val = v;
        Ok(gc)
    })?;
    let mut f = c_val;
    if lambda > 0.0 {
        for ((gi, xi), ti) in g.iter_mut().zip(x).zip(x_t) {
            let r = xi - ti;
            f += lambda * r * r;
            *gi += 2.0 * lambda * r;
        }
    }
    Ok((f, g))
}

/// Minimizes the projection objective from `x_t` and returns the best iterate.
pub fn project<D, C>(
    net: &D,
    constraint: &C,
    x_t: &[f64],
    sigma: f64,
    lambda: f64,
    config: &ProjectionConfig,
) -> Result<ProjectionResult>
where
    D: Denoiser + ?Sized,
    C: Constraint + ?Sized,
{
    check_dim(net.dim(), x_t.len())?;
    check_dim(constraint.dim(), x_t.len())?;
    check_finite(x_t, "projection start")?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Input(format!("penalty must be finite and nonnegative, got {lambda}")));
    }
    let mut obj = |x: &[f64]| projection_objective(net, constraint, x_t, sigma, lambda, x);
    let min = match &config.optimizer {
        Optimizer::Lbfgs(p) => lbfgs_minimize(&mut obj, x_t, p, config.max_iters, config.objective_tol)?,
        Optimizer::Adam(p) => adam_minimize(&mut obj, x_t, *p, config.max_iters, config.objective_tol)?,
    };
    let denoised = net.denoise(&min.x, sigma)?;
    let constraint_value = constraint.eval(&denoised)?;
    Ok(ProjectionResult {
        x_star: min.x,
        denoised,
        objective_value: min.f,
        constraint_value,
        iters_used: min.iters,
        converged: min.converged,
    })
}

/// `d(x*, σ) + σ ξ`.
pub fn renoise<D, R>(net: &D, x_star: &[f64], sigma: f64, rng: &mut R) -> Result<Vec<f64>>
where
    D: Denoiser + ?Sized,
    R: Rng + ?Sized,
{
    let d = net.denoise(x_star, sigma)?;
    Ok(renoise_denoised(d, sigma, rng))
}

/// Forward kernel applied to an already denoised point.
pub fn renoise_denoised<R: Rng + ?Sized>(mut denoised: Vec<f64>, sigma: f64, rng: &mut R) -> Vec<f64> {
    if sigma > 0.0 {
        for v in &mut denoised {
            *v += sigma * rng::normal(rng);
        }
    }
    denoised
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::PointCloud;
    use crate::constraints::{NoConstraint, PointConstraint};
    use crate::denoiser::{GaussianDenoiser, IdentityDenoiser};
    use crate::metrics::{knn_cross_edge_rate, CrossEdgeParams};
    use crate::sde::marginal_cloud;

    fn point(a: &[f64]) -> PointConstraint {
        PointConstraint { center: a.to_vec() }
    }

    #[test]
    fn lambda_schedules() {
        assert_eq!(lambda_at(&LambdaSchedule::Zero, 5, 3.0), 0.0);
        assert_eq!(lambda_at(&LambdaSchedule::Data2d, 0, 0.0), 0.0);
        assert!((lambda_at(&LambdaSchedule::Data2d, 10, 2.0) - 0.2).abs() < 1e-15);
        let custom = LambdaSchedule::Custom { table: vec![0.0, 1.0, 2.0] };
        assert_eq!(lambda_at(&custom, 1, 9.0), 1.0);
        assert_eq!(lambda_at(&custom, 7, 9.0), 2.0);
        assert!(LambdaSchedule::Custom { table: vec![] }.validate().is_err());
    }

    #[test]
    fn unpenalized_quadratic_reaches_center() {
        let net = IdentityDenoiser { dim: 3 };
        let a = [1.0, -2.0, 0.5];
        let r = project(&net, &point(&a), &[4.0, 4.0, 4.0], 0.7, 0.0, &ProjectionConfig::default()).unwrap();
        for (x, t) in r.x_star.iter().zip(a) {
            assert!((x - t).abs() < 1e-8);
        }
        assert!(r.constraint_value < 1e-12);
    }

    #[test]
    fn unit_penalty_gives_midpoint() {
        let net = IdentityDenoiser { dim: 2 };
        let (a, xt) = ([1.0, 3.0], [-1.0, 0.0]);
        let r = project(&net, &point(&a), &xt, 0.3, 1.0, &ProjectionConfig::default()).unwrap();
        assert!((r.x_star[0] - 0.0).abs() < 1e-6 && (r.x_star[1] - 1.5).abs() < 1e-6, "{:?}", r.x_star);
    }

    #[test]
    fn huge_penalty_pins_start() {
        let net = IdentityDenoiser { dim: 2 };
        let mut r = rng::seeded(0);
        for _ in 0..20 {
            let a = rng::normal_vec(&mut r, 2);
            let xt = rng::normal_vec(&mut r, 2);
            let c0 = point(&a).eval(&xt).unwrap();
            let r = project(&net, &point(&a), &xt, 1.0, 1e7 * c0.max(1e-3), &ProjectionConfig::default()).unwrap();
            let moved = r.x_star.iter().zip(&xt).map(|(x, t)| (x - t).powi(2)).sum::<f64>().sqrt();
            assert!(moved < 1e-3, "{moved}");
        }
    }

    #[test]
    fn best_objective_never_worse_than_start() {
        let net = GaussianDenoiser::isotropic(vec![0.5, -0.5], 2.0);
        let mut r = rng::seeded(1);
        for cfg in [
            ProjectionConfig::default(),
            ProjectionConfig {
                optimizer: Optimizer::Adam(AdamParams::with_lr(0.5)),
                ..Default::default()
            },
        ] {
            for _ in 0..20 {
                let xt = rng::normal_vec(&mut r, 2);
                let c = point(&rng::normal_vec(&mut r, 2));
                let f0 = projection_objective(&net, &c, &xt, 0.8, 0.3, &xt).unwrap().0;
                let res = project(&net, &c, &xt, 0.8, 0.3, &cfg).unwrap();
                assert!(res.objective_value <= f0);
                let check = projection_objective(&net, &c, &xt, 0.8, 0.3, &res.x_star).unwrap().0;
                assert!((check - res.objective_value).abs() < 1e-12);
                assert_eq!(res.constraint_value, c.eval(&net.denoise(&res.x_star, 0.8).unwrap()).unwrap());
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let net = GaussianDenoiser {
            mean: vec![0.2, -1.0],
            var: vec![0.5, 2.0],
        };
        let c = point(&[1.0, 1.0]);
        let (xt, x) = ([0.3, 0.1], [-0.4, 0.9]);
        let (_, g) = projection_objective(&net, &c, &xt, 1.3, 0.7, &x).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            let (mut p, mut m) = (x, x);
            p[i] += h;
            m[i] -= h;
            let fd = (projection_objective(&net, &c, &xt, 1.3, 0.7, &p).unwrap().0
                - projection_objective(&net, &c, &xt, 1.3, 0.7, &m).unwrap().0)
                / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn non_finite_start_and_dimension_errors() {
        let net = IdentityDenoiser { dim: 2 };
        let cfg = ProjectionConfig::default();
        assert!(project(&net, &point(&[0.0, 0.0]), &[f64::NAN, 0.0], 1.0, 0.0, &cfg).is_err());
        assert!(project(&net, &point(&[0.0, 0.0, 0.0]), &[0.0, 0.0], 1.0, 0.0, &cfg).is_err());
        assert!(ProjectionConfig { max_iters: 0, ..cfg }.validate().is_err());
    }

    #[test]
    fn zero_constraint_leaves_start() {
        let net = GaussianDenoiser::standard(2);
        let r = project(&net, &NoConstraint { dim: 2 }, &[0.4, -2.0], 1.0, 0.0, &ProjectionConfig::default()).unwrap();
        assert_eq!(r.x_star, vec![0.4, -2.0]);
    }

    #[test]
    fn renoise_examples() {
        let net = GaussianDenoiser::standard(2);
        let x = [2.0, -1.0];
        let d = net.denoise(&x, 1.0).unwrap();
        assert_eq!(renoise(&net, &x, 0.0, &mut rng::seeded(0)).unwrap(), net.denoise(&x, 0.0).unwrap());
        assert_eq!(renoise_denoised(d.clone(), 0.0, &mut rng::seeded(0)), d);

        let n = 100_000;
        let mut r = rng::seeded(1);
        let mut data = Vec::with_capacity(2 * n);
        for _ in 0..n {
            data.extend(renoise(&net, &x, 1.5, &mut r).unwrap());
        }
        let cov = PointCloud::new(2, data).unwrap().covariance();
        assert!((cov[0] / 2.25 - 1.0).abs() < 0.03 && (cov[3] / 2.25 - 1.0).abs() < 0.03);
        assert!(cov[1].abs() < 0.03 * 2.25);
    }

    #[test]
    fn renoise_kernel_matches_forward_marginal() {
        let n = 4096;
        let mut r = rng::seeded(2);
        let feasible = PointCloud::new(2, rng::normal_vec(&mut r, 2 * n).iter().map(|v| v * 0.3).collect()).unwrap();
        let sigma = 0.5;
        let forward = marginal_cloud(&feasible, sigma, &mut r).unwrap();
        // σ = 0 makes the identity denoiser return x0 itself
        let net = IdentityDenoiser { dim: 2 };
        let mut renoised = Vec::with_capacity(2 * n);
        let other = PointCloud::new(2, rng::normal_vec(&mut r, 2 * n).iter().map(|v| v * 0.3).collect()).unwrap();
        for row in other.rows() {
            renoised.extend(renoise_denoised(net.denoise(row, 0.0).unwrap(), sigma, &mut r));
        }
        let renoised = PointCloud::new(2, renoised).unwrap();
        let rate = knn_cross_edge_rate(
            &forward,
            &renoised,
            &CrossEdgeParams {
                k: 5,
                subsample: 4096,
                repeats: 1,
            },
            &mut r,
        )
        .unwrap();
        assert!((0.45..=0.55).contains(&rate), "{rate}");
    }
}
