//! Ground-truth constrained clouds.
//!
//! The sampled oracle keeps prior draws with `c(x) <= ε` and then polishes
//! them with guarded gradient descent on `c`. The closed-form oracle
//! conditions a Gaussian on a hyperplane.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::constraints::Constraint;
use crate::error::{check_dim, Error, Result};
use crate::io::{ArrayFile, NamedArray};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_refine_steps")]
    pub refine_steps: usize,
    #[serde(default = "default_refine_lr")]
    pub refine_lr: f64,
    pub target_count: usize,
    pub max_proposals: usize,
    /// Prior samples requested per sampler call.
    #[serde(default = "default_batch")]
    pub batch: usize,
}

fn default_epsilon() -> f64 {
    1e-2
}
fn default_refine_steps() -> usize {
    50
}
fn default_refine_lr() -> f64 {
    0.1
}
fn default_batch() -> usize {
    4096
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            epsilon: default_epsilon(),
            refine_steps: default_refine_steps(),
            refine_lr: default_refine_lr(),
            target_count: 2048,
            max_proposals: 1 << 20,
            batch: default_batch(),
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.refine_lr > 0.0 && self.refine_lr.is_finite()) {
            return Err(Error::Config("refine_lr must be positive".into()));
        }
        if self.target_count == 0 || self.max_proposals == 0 || self.batch == 0 {
            return Err(Error::Config("target_count, max_proposals and batch must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSample {
    /// Refined accepted points.
    pub cloud: PointCloud,
    /// Accepted points before refinement.
    pub accepted: PointCloud,
    pub proposals: usize,
}

impl OracleSample {
    pub fn acceptance_rate(&self) -> f64 {
        self.accepted.len() as f64 / self.proposals.max(1) as f64
    }
}

/// Streams prior batches from `sampler(count, seed)` until `target_count`
/// points satisfy `c(x) <= ε`, then refines them.
pub fn rejection_sample<F, C, R>(mut sampler: F, constraint: &C, config: &OracleConfig, rng: &mut R) -> Result<OracleSample>
where
    F: FnMut(usize, u64) -> Result<PointCloud>,
    C: Constraint + ?Sized,
    R: Rng + ?Sized,
{
    config.validate()?;
    let mut accepted = PointCloud::zeros(0, constraint.dim());
    let mut proposals = 0;
    while accepted.len() < config.target_count && proposals < config.max_proposals {
        let count = config.batch.min(config.max_proposals - proposals);
        let batch = sampler(count, rng.random())?;
        check_dim(constraint.dim(), batch.dim())?;
        proposals += batch.len();
        if batch.is_empty() {
            break;
        }
        accept_into(&mut accepted, &batch, constraint, config)?;
    }
    finish(accepted, proposals, constraint, config)
}

/// Rejection sampling against a precomputed prior pool, so that several
/// constraints can share one set of prior draws.
pub fn rejection_from_pool<C>(pool: &PointCloud, constraint: &C, config: &OracleConfig) -> Result<OracleSample>
where
    C: Constraint + ?Sized,
{
    config.validate()?;
    check_dim(constraint.dim(), pool.dim())?;
    let mut accepted = PointCloud::zeros(0, pool.dim());
    let limit = pool.len().min(config.max_proposals);
    let mut proposals = 0;
    for row in pool.rows().take(limit) {
        if accepted.len() >= config.target_count {
            break;
        }
        proposals += 1;
        if constraint.eval(row)? <= config.epsilon {
            accepted.push(row)?;
        }
    }
    finish(accepted, proposals, constraint, config)
}

fn accept_into<C: Constraint + ?Sized>(
    accepted: &mut PointCloud,
    batch: &PointCloud,
    constraint: &C,
    config: &OracleConfig,
) -> Result<()> {
    for row in batch.rows() {
        if accepted.len() >= config.target_count {
            break;
        }
        if constraint.eval(row)? <= config.epsilon {
            accepted.push(row)?;
        }
    }
    Ok(())
}

fn finish<C: Constraint + ?Sized>(
    accepted: PointCloud,
    proposals: usize,
    constraint: &C,
    config: &OracleConfig,
) -> Result<OracleSample> {
    if accepted.len() < config.target_count {
        return Err(Error::OracleExhausted {
            accepted: accepted.len(),
            target: config.target_count,
            proposals,
        });
    }
    let cloud = refine(&accepted, constraint, config.refine_steps, config.refine_lr)?;
    Ok(OracleSample {
        cloud,
        accepted,
        proposals,
    })
}

/// Gradient descent on `c` for every point. A step that does not lower `c`
/// is retried with half the step size; after 30 halvings the point stops.
pub fn refine<C: Constraint + ?Sized>(cloud: &PointCloud, constraint: &C, steps: usize, lr: f64) -> Result<PointCloud> {
    check_dim(constraint.dim(), cloud.dim())?;
    let mut out = cloud.clone();
    for row in out.rows_mut() {
        refine_point(row, constraint, steps, lr)?;
    }
    Ok(out)
}

fn refine_point<C: Constraint + ?Sized>(x: &mut [f64], constraint: &C, steps: usize, lr: f64) -> Result<()> {
    let (mut c, mut g) = constraint.eval_grad(x)?;
    let mut trial = vec![0.0; x.len()];
    'outer: for _ in 0..steps {
        if c == 0.0 || g.iter().all(|v| *v == 0.0) {
            break;
        }
        let mut h = lr;
        for _ in 0..30 {
            for ((t, xi), gi) in trial.iter_mut().zip(x.iter()).zip(&g) {
                *t = xi - h * gi;
            }
            let (ct, gt) = constraint.eval_grad(&trial)?;
            if ct < c {
                x.copy_from_slice(&trial);
                (c, g) = (ct, gt);
                continue 'outer;
            }
            h *= 0.5;
        }
        break;
    }
    Ok(())
}

/// Lower Cholesky factor of a row-major SPD matrix.
fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = a[i * n + j] - (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum::<f64>();
            if i == j {
                if !(s > 1e-14 * a[i * n + i].abs().max(1e-300)) {
                    return Err(Error::Singular);
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// Exact draws from `N(mean, cov)` conditioned on `aᵀx = b`, obtained by
/// correcting unconditional draws: `x = z - Σa (aᵀz - b) / (aᵀΣa)`.
pub fn gaussian_conditional_oracle<R: Rng + ?Sized>(
    mean: &[f64],
    cov: &[f64],
    a: &[f64],
    b: f64,
    n: usize,
    rng: &mut R,
) -> Result<PointCloud> {
    let d = mean.len();
    check_dim(d * d, cov.len())?;
    check_dim(d, a.len())?;
    if a.iter().all(|v| *v == 0.0) {
        return Err(Error::Input("constraint normal must be nonzero".into()));
    }
    for i in 0..d {
        for j in 0..i {
            if (cov[i * d + j] - cov[j * d + i]).abs() > 1e-12 * (1.0 + cov[i * d + j].abs()) {
                return Err(Error::Input("covariance must be symmetric".into()));
            }
        }
    }
    let l = cholesky(cov, d)?;
    let sa: Vec<f64> = (0..d).map(|i| (0..d).map(|j| cov[i * d + j] * a[j]).sum()).collect();
    let asa: f64 = a.iter().zip(&sa).map(|(u, v)| u * v).sum();
    let mut out = PointCloud::zeros(n, d);
    let mut e = vec![0.0; d];
    for row in out.rows_mut() {
        rng::fill_normal(rng, &mut e);
        for i in 0..d {
            row[i] = mean[i] + (0..=i).map(|k| l[i * d + k] * e[k]).sum::<f64>();
        }
        let r = a.iter().zip(row.iter()).map(|(u, v)| u * v).sum::<f64>() - b;
        for (x, s) in row.iter_mut().zip(&sa) {
            *x -= s * r / asa;
        }
    }
    Ok(out)
}

const ORACLE_KIND: &str = "oracle-sample";

impl OracleSample {
    pub fn to_array_file(&self) -> ArrayFile {
        ArrayFile::new(serde_json::json!({ "kind": ORACLE_KIND, "proposals": self.proposals }))
            .with_array(NamedArray::from_cloud("cloud", &self.cloud))
            .with_array(NamedArray::from_cloud("accepted", &self.accepted))
    }

    pub fn from_array_file(file: &ArrayFile) -> Result<Self> {
        file.expect_kind(ORACLE_KIND)?;
        let proposals = file.meta["proposals"]
            .as_u64()
            .ok_or_else(|| Error::Format("oracle file lacks a proposal count".into()))?;
        Ok(Self {
            cloud: file.cloud("cloud")?,
            accepted: file.cloud("accepted")?,
            proposals: proposals as usize,
        })
    }
}
