//! Reverse-time samplers.
//!
//! Every sampler runs `n` independent chains; chain `i` draws all of its
//! randomness from `rng::substream(seed, i)`, so results do not depend on the
//! batch size. Denoiser calls for the predictor are batched across chains.
//! A chain whose state becomes non-finite or whose projection fails is frozen
//! at its last finite state and reported in [`SampleRun::failures`].

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::constraints::Constraint;
use crate::denoiser::{Denoiser, IdentityDenoiser};
use crate::error::{check_dim, Error, Result};
use crate::io::{ArrayFile, NamedArray};
use crate::projection::{lambda_at, project, ProjectionConfig};
use crate::rng::{self, SimRng};
use crate::sde::NoiseSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predictor {
    /// Deterministic probability-flow step.
    #[default]
    EulerOde,
    /// DDIM-style step; `churn = 1` gives the ancestral posterior variance.
    DdimStochastic { churn: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PprConfig {
    /// Project-renoise rounds per step.
    pub inner_steps: usize,
    #[serde(default)]
    pub projection: ProjectionConfig,
}

impl Default for PprConfig {
    fn default() -> Self {
        Self {
            inner_steps: 2,
            projection: ProjectionConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    /// Guidance scale; the step at noise level σ is `ζ σ² / (c + 1e-8)`.
    pub dps_zeta: f64,
    /// Budget of the clean-space projection (penalty ignored).
    #[serde(default)]
    pub x0proj: ProjectionConfig,
    /// Budget of the noisy-space projection (penalty ignored).
    #[serde(default)]
    pub xtproj: ProjectionConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            dps_zeta: 1.0,
            x0proj: ProjectionConfig::default(),
            xtproj: ProjectionConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    #[serde(default)]
    pub schedule: NoiseSchedule,
    #[serde(default)]
    pub predictor: Predictor,
    #[serde(default)]
    pub correct_steps: usize,
    #[serde(default = "default_snr")]
    pub langevin_snr: f64,
    #[serde(default)]
    pub ppr: PprConfig,
    #[serde(default)]
    pub baselines: BaselineConfig,
    /// Step indices whose states are recorded.
    #[serde(default)]
    pub snapshot_steps: Vec<usize>,
}

fn default_snr() -> f64 {
    0.1
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            schedule: NoiseSchedule::default(),
            predictor: Predictor::default(),
            correct_steps: 0,
            langevin_snr: default_snr(),
            ppr: PprConfig::default(),
            baselines: BaselineConfig::default(),
            snapshot_steps: Vec::new(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if !(self.langevin_snr > 0.0 && self.langevin_snr.is_finite()) {
            return Err(Error::Config("Langevin snr must be positive".into()));
        }
        if let Predictor::DdimStochastic { churn } = self.predictor {
            if !(0.0..=1.0).contains(&churn) {
                return Err(Error::Config(format!("churn must lie in [0, 1], got {churn}")));
            }
        }
        if let Some(&s) = self.snapshot_steps.iter().find(|&&s| s > self.schedule.num_steps) {
            return Err(Error::Range {
                index: s,
                max: self.schedule.num_steps,
            });
        }
        if !(self.baselines.dps_zeta >= 0.0 && self.baselines.dps_zeta.is_finite()) {
            return Err(Error::Config("DPS scale must be finite and nonnegative".into()));
        }
        self.ppr.projection.validate()?;
        self.baselines.x0proj.validate()?;
        self.baselines.xtproj.validate()
    }

    /// Snapshot steps closest to the requested noise levels.
    pub fn with_snapshots_at(mut self, sigmas: &[f64]) -> Self {
        self.snapshot_steps = sigmas.iter().map(|s| self.schedule.nearest_step(*s)).collect();
        self.snapshot_steps.sort_unstable();
        self.snapshot_steps.dedup();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: usize,
    pub sigma: f64,
    pub cloud: PointCloud,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFailure {
    pub index: usize,
    pub step: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRun {
    pub cloud: PointCloud,
    pub snapshots: Vec<Snapshot>,
    /// `c(x0)` per sample; empty for unconstrained runs.
    pub violations: Vec<f64>,
    pub failures: Vec<SampleFailure>,
    pub seed: u64,
    pub elapsed_secs: f64,
}

impl SampleRun {
    pub fn failed_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.cloud.len()];
        for f in &self.failures {
            mask[f.index] = true;
        }
        mask
    }

    pub fn valid_indices(&self) -> Vec<usize> {
        self.failed_mask().iter().enumerate().filter(|(_, f)| !**f).map(|(i, _)| i).collect()
    }

    /// Final samples of the chains that did not fail.
    pub fn valid_cloud(&self) -> PointCloud {
        self.cloud.select(&self.valid_indices())
    }

    pub fn valid_violations(&self) -> Vec<f64> {
        let mask = self.failed_mask();
        self.violations.iter().zip(mask).filter(|(_, f)| !f).map(|(v, _)| *v).collect()
    }

    pub fn snapshot(&self, step: usize) -> Option<&Snapshot> {
        self.snapshots.iter().find(|s| s.step == step)
    }

    /// Same as `==` but ignores wall-clock time.
    pub fn same_samples(&self, other: &SampleRun) -> bool {
        self.cloud == other.cloud
            && self.snapshots == other.snapshots
            && self.violations == other.violations
            && self.failures == other.failures
    }
}

/// Reverse step from `σ_t` to `σ_prev` given the denoised estimate.
pub fn predict_from<R: Rng + ?Sized>(
    x_t: &[f64],
    x0_hat: &[f64],
    sigma_t: f64,
    sigma_prev: f64,
    predictor: Predictor,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(sigma_prev < sigma_t) || sigma_prev < 0.0 {
        return Err(Error::Input(format!(
            "predictor needs 0 <= sigma_prev < sigma_t, got {sigma_prev} and {sigma_t}"
        )));
    }
    let mut out = Vec::with_capacity(x_t.len());
    match predictor {
        Predictor::EulerOde => {
            let ratio = sigma_prev / sigma_t;
            out.extend(x_t.iter().zip(x0_hat).map(|(x, d)| d + ratio * (x - d)));
        }
        Predictor::DdimStochastic { churn } => {
            let s = churn * sigma_prev * (1.0 - (sigma_prev / sigma_t).powi(2)).max(0.0).sqrt();
            let keep = (sigma_prev * sigma_prev - s * s).max(0.0).sqrt() / sigma_t;
            for (x, d) in x_t.iter().zip(x0_hat) {
                out.push(d + keep * (x - d) + s * rng::normal(rng));
            }
        }
    }
    Ok(out)
}

pub fn predict_step<D, R>(
    net: &D,
    x_t: &[f64],
    sigma_t: f64,
    sigma_prev: f64,
    rng: &mut R,
    predictor: Predictor,
) -> Result<Vec<f64>>
where
    D: Denoiser + ?Sized,
    R: Rng + ?Sized,
{
    let x0_hat = net.denoise(x_t, sigma_t)?;
    predict_from(x_t, &x0_hat, sigma_t, sigma_prev, predictor, rng)
}

/// Langevin step `x + τ (d - x) + √(2τ) σ ξ` with `τ = snr²`, i.e. step
/// size `τσ²` on the Tweedie score.
pub fn correct_from<R: Rng + ?Sized>(x: &[f64], x0_hat: &[f64], sigma: f64, snr: f64, rng: &mut R) -> Vec<f64> {
    let tau = snr * snr;
    let noise = (2.0 * tau).sqrt() * sigma;
    x.iter()
        .zip(x0_hat)
        .map(|(xi, di)| xi + tau * (di - xi) + noise * rng::normal(rng))
        .collect()
}

pub fn correct_step<D, R>(net: &D, x: &[f64], sigma: f64, rng: &mut R, snr: f64) -> Result<Vec<f64>>
where
    D: Denoiser + ?Sized,
    R: Rng + ?Sized,
{
    if !(sigma > 0.0) {
        return Err(Error::ZeroSigma(sigma));
    }
    if snr == 0.0 {
        return Ok(x.to_vec());
    }
    let d = net.denoise(x, sigma)?;
    Ok(correct_from(x, &d, sigma, snr, rng))
}

const RUN_KIND: &str = "sample-run";

#[derive(Serialize, Deserialize)]
struct RunMeta {
    kind: String,
    seed: u64,
    elapsed_secs: f64,
    failures: Vec<SampleFailure>,
    snapshots: Vec<(usize, f64)>,
}

impl SampleRun {
    pub fn to_array_file(&self) -> ArrayFile {
        let meta = RunMeta {
            kind: RUN_KIND.into(),
            seed: self.seed,
            elapsed_secs: self.elapsed_secs,
            failures: self.failures.clone(),
            snapshots: self.snapshots.iter().map(|s| (s.step, s.sigma)).collect(),
        };
        let mut file = ArrayFile::new(serde_json::to_value(meta).expect("run meta serializes"))
            .with_array(NamedArray::from_cloud("cloud", &self.cloud))
            .with_array(NamedArray::new("violations", vec![self.violations.len()], self.violations.clone()).expect("dims match"));
        for (i, s) in self.snapshots.iter().enumerate() {
            file = file.with_array(NamedArray::from_cloud(format!("snapshot_{i}"), &s.cloud));
        }
        file
    }

    pub fn from_array_file(file: &ArrayFile) -> Result<Self> {
        file.expect_kind(RUN_KIND)?;
        let meta: RunMeta =
            serde_json::from_value(file.meta.clone()).map_err(|e| Error::Format(format!("bad sample-run meta: {e}")))?;
        let snapshots = meta
            .snapshots
            .iter()
            .enumerate()
            .map(|(i, &(step, sigma))| {
                Ok(Snapshot {
                    step,
                    sigma,
                    cloud: file.cloud(&format!("snapshot_{i}"))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            cloud: file.cloud("cloud")?,
            snapshots,
            violations: file.get("violations")?.data.clone(),
            failures: meta.failures,
            seed: meta.seed,
            elapsed_secs: meta.elapsed_secs,
        })
    }
}

/// Sampler families understood by the runners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Pc,
    Ppr,
    Dps,
    X0proj,
    Xtproj,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Pc, Method::Ppr, Method::Dps, Method::X0proj, Method::Xtproj];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pc => "pc",
            Method::Ppr => "ppr",
            Method::Dps => "dps",
            Method::X0proj => "x0proj",
            Method::Xtproj => "xtproj",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

/// Runs `method`; `constraint` is ignored by [`Method::Pc`].
pub fn sample_method<D, C>(
    method: Method,
    net: &D,
    constraint: &C,
    config: &SamplerConfig,
    n: usize,
    seed: u64,
) -> Result<SampleRun>
where
    D: Denoiser + ?Sized,
    C: Constraint + ?Sized,
{
    match method {
        Method::Pc => pc_sample(net, config, n, seed),
        Method::Ppr => ppr_sample(net, constraint, config, n, seed),
        Method::Dps => dps_sample(net, constraint, config, n, seed),
        Method::X0proj => x0_projection_sample(net, constraint, config, n, seed),
        Method::Xtproj => xt_projection_sample(net, constraint, config, n, seed),
    }
}

/// Chain states plus per-chain streams and failure records.
struct Chains {
    x: PointCloud,
    rngs: Vec<SimRng>,
    failed: Vec<Option<SampleFailure>>,
    snapshots: Vec<Snapshot>,
    started: Instant,
    seed: u64,
}

impl Chains {
    fn init(config: &SamplerConfig, dim: usize, n: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if n == 0 {
            return Err(Error::Input("sample count must be positive".into()));
        }
        let sigma_max = config.schedule.sigma_max;
        let mut rngs: Vec<SimRng> = (0..n as u64).map(|i| rng::substream(seed, i)).collect();
        let mut data = Vec::with_capacity(n * dim);
        for r in &mut rngs {
            for _ in 0..dim {
                data.push(sigma_max * rng::normal(r));
            }
        }
        let mut chains = Self {
            x: PointCloud::new(dim, data)?,
            rngs,
            failed: vec![None; n],
            snapshots: Vec::new(),
            started: Instant::now(),
            seed,
        };
        chains.maybe_snapshot(config, config.schedule.num_steps)?;
        Ok(chains)
    }

    fn live(&self, i: usize) -> bool {
        self.failed[i].is_none()
    }

    fn fail(&mut self, i: usize, step: usize, message: String) {
        if self.failed[i].is_none() {
            self.failed[i] = Some(SampleFailure { index: i, step, message });
        }
    }

    /// Applies `f` to every live chain; errors and non-finite results mark the
    /// chain failed and leave its state unchanged.
    fn update<F>(&mut self, step: usize, mut f: F)
    where
        F: FnMut(usize, &[f64], &mut SimRng) -> Result<Vec<f64>>,
    {
        for i in 0..self.x.len() {
            if !self.live(i) {
                continue;
            }
            match f(i, self.x.row(i), &mut self.rngs[i]) {
                Ok(next) if next.iter().all(|v| v.is_finite()) => self.x.row_mut(i).copy_from_slice(&next),
                Ok(_) => self.fail(i, step, "non-finite state".into()),
                Err(e) => self.fail(i, step, e.to_string()),
            }
        }
    }

    fn predict<D: Denoiser + ?Sized>(
        &mut self,
        net: &D,
        step: usize,
        sigma_t: f64,
        sigma_prev: f64,
        predictor: Predictor,
    ) -> Result<()> {
        let x0_hat = net.denoise_cloud(&self.x, sigma_t)?;
        self.update(step, |i, x, r| predict_from(x, x0_hat.row(i), sigma_t, sigma_prev, predictor, r));
        Ok(())
    }

    fn correct<D: Denoiser + ?Sized>(&mut self, net: &D, step: usize, sigma: f64, config: &SamplerConfig) -> Result<()> {
        if sigma == 0.0 {
            return Ok(());
        }
        for _ in 0..config.correct_steps {
            let x0_hat = net.denoise_cloud(&self.x, sigma)?;
            let snr = config.langevin_snr;
            self.update(step, |i, x, r| Ok(correct_from(x, x0_hat.row(i), sigma, snr, r)));
        }
        Ok(())
    }

    fn maybe_snapshot(&mut self, config: &SamplerConfig, step: usize) -> Result<()> {
        if config.snapshot_steps.contains(&step) {
            self.snapshots.push(Snapshot {
                step,
                sigma: config.schedule.sigma_at(step)?,
                cloud: self.x.clone(),
            });
        }
        Ok(())
    }

    fn finish<C: Constraint + ?Sized>(mut self, constraint: Option<&C>) -> Result<SampleRun> {
        let violations = match constraint {
            Some(c) => self.x.rows().map(|r| c.eval(r)).collect::<Result<Vec<_>>>()?,
            None => Vec::new(),
        };
        for (i, v) in violations.iter().enumerate() {
            if !v.is_finite() {
                self.fail(i, 0, format!("constraint value {v} at the final sample"));
            }
        }
        Ok(SampleRun {
            cloud: self.x,
            snapshots: self.snapshots,
            violations,
            failures: self.failed.into_iter().flatten().collect(),
            seed: self.seed,
            elapsed_secs: self.started.elapsed().as_secs_f64(),
        })
    }
}

fn check_pair<D, C>(net: &D, constraint: &C) -> Result<()>
where
    D: Denoiser + ?Sized,
    C: Constraint + ?Sized,
{
    check_dim(net.dim(), constraint.dim())
}

/// Predictor-corrector sampling from the unconstrained prior.
pub fn pc_sample<D: Denoiser + ?Sized>(net: &D, config: &SamplerConfig, n: usize, seed: u64) -> Result<SampleRun> {
    let mut chains = Chains::init(config, net.dim(), n, seed)?;
    let sigmas = config.schedule.sigmas();
    for t in (1..=config.schedule.num_steps).rev() {
        chains.predict(net, t - 1, sigmas[t], sigmas[t - 1], config.predictor)?;
        chains.correct(net, t - 1, sigmas[t - 1], config)?;
        chains.maybe_snapshot(config, t - 1)?;
    }
    chains.finish::<dyn Constraint>(None)
}

/// Predict-project-renoise with `config.ppr.inner_steps` rounds per step.
pub fn ppr_sample<D, C>(net: &D, constraint: &C, config: &SamplerConfig, n: usize, seed: u64) -> Result<SampleRun>
where
    D: Denoiser + ?Sized,
    C: Constraint + ?Sized,
{
    if config.ppr.inner_steps == 0 {
        return Err(Error::Config("PPR needs at least one project-renoise round".into()));
    }
    ppr_sample_with_rounds(net, constraint, config, config.ppr.inner_steps, n, seed)
}

/// As [`ppr_sample`] with an explicit round count; zero rounds leaves only
/// the final projection.
pub fn ppr_sample_with_rounds<D, C>(
    net: &D,
    constraint: &C,
    config: &SamplerConfig,
    rounds: usize,
    n: usize,
    seed: u64,
) -> Result<SampleRun>
where
    D: Denoiser + ?Sized,
    C: Constraint + ?Sized,
{
    check_pair(net, constraint)?;
    let mut chains = Chains::init(config, net.dim(), n, seed)?;
    let sigmas = config.schedule.sigmas();
    let proj = &config.ppr.projection;
    for t in (1..=config.schedule.num_steps).rev() {
        let (s_t, s_prev) = (sigmas[t], sigmas[t - 1]);
        chains.predict(net, t - 1, s_t, s_prev, config.predictor)?;
        chains.correct(net, t - 1, s_prev, config)?;
        let lambda = lambda_at(&proj.lambda, t - 1, s_prev);
        if t > 1 {
            for _ in 0..rounds {
                chains.update(t - 1, |_, x, r| {
                    let p = project(net, constraint, x, s_prev, lambda, proj)?;
                    let mut next = p.denoised;
                    for v in &mut next {
                        *v += s_prev * rng::normal(r);
                    }
                    Ok(next)
                });
            }
        } else {
            chains.update(0, |_, x, _| Ok(project(net, constraint, x, 0.0, lambda, proj)?.denoised));
        }
        chains.maybe_snapshot(config, t - 1)?;
    }
    chains.finish(Some(constraint))
}

/// Guidance by the gradient of `c(d(x, σ))` after every predictor step.
pub fn dps_sample<D, C>(net: &D, constraint: &C, config: &SamplerConfig, n: usize, seed: u64) -> Result<SampleRun>
where
    D: Denoiser + ?Sized,
    C: Constraint + ?Sized,
{
    check_pair(net, constraint)?;
    let mut chains = Chains::init(config, net.dim(), n, seed)?;
    let sigmas = config.schedule.sigmas();
    let zeta = config.baselines.dps_zeta;
    for t in (1..=config.schedule.num_steps).rev() {
        let s_prev = sigmas[t - 1];
        chains.predict(net, t - 1, sigmas[t], s_prev, config.predictor)?;
        chains.correct(net, t - 1, s_prev, config)?;
        if s_prev > 0.0 && zeta > 0.0 {
            chains.update(t - 1, |_, x, _| {
                let mut c_val = 0.0;
                let (_, g) = net.denoise_pullback(x, s_prev, &mut |d| {
                    let (v, gc) = constraint.eval_grad(d)?;
                    c_val = v;
                    Ok(gc)
                })?;
                let step = zeta * s_prev * s_prev / (c_val + 1e-8);
                Ok(x.iter().zip(&g).map(|(xi, gi)| xi - step * gi).collect())
            });
        }
        chains.maybe_snapshot(config, t - 1)?;
    }
    chains.finish(Some(constraint))
}

/// Projects the denoised estimate onto the constraint set (no denoiser in
/// the loop) and continues the predictor from the projected estimate.
pub fn x0_projection_sample<D, C>(
    net: &D,
    constraint: &C,
    config: &SamplerConfig,
    n: usize,
    seed: u64,
) -> Result<SampleRun>
where
    D: Denoiser + ?Sized,
    C: Constraint + ?Sized,
{
    check_pair(net, constraint)?;
    let mut chains = Chains::init(config, net.dim(), n, seed)?;
    let sigmas = config.schedule.sigmas();
    let identity = IdentityDenoiser { dim: net.dim() };
    let proj = &config.baselines.x0proj;
    for t in (1..=config.schedule.num_steps).rev() {
        let (s_t, s_prev) = (sigmas[t], sigmas[t - 1]);
        let x0_hat = net.denoise_cloud(&chains.x, s_t)?;
        chains.update(t - 1, |i, x, r| {
            let p = project(&identity, constraint, x0_hat.row(i), 0.0, 0.0, proj)?;
            predict_from(x, &p.x_star, s_t, s_prev, config.predictor, r)
        });
        chains.correct(net, t - 1, s_prev, config)?;
        chains.maybe_snapshot(config, t - 1)?;
    }
    chains.finish(Some(constraint))
}

/// Projects the noisy iterate itself onto the constraint set after every
/// predictor step.
pub fn xt_projection_sample<D, C>(
    net: &D,
    constraint: &C,
    config: &SamplerConfig,
    n: usize,
    seed: u64,
) -> Result<SampleRun>
where
    D: Denoiser + ?Sized,
    C: Constraint + ?Sized,
{
    check_pair(net, constraint)?;
    let mut chains = Chains::init(config, net.dim(), n, seed)?;
    let sigmas = config.schedule.sigmas();
    let identity = IdentityDenoiser { dim: net.dim() };
    let proj = &config.baselines.xtproj;
    for t in (1..=config.schedule.num_steps).rev() {
        let s_prev = sigmas[t - 1];
        chains.predict(net, t - 1, sigmas[t], s_prev, config.predictor)?;
        chains.correct(net, t - 1, s_prev, config)?;
        chains.update(t - 1, |_, x, _| Ok(project(&identity, constraint, x, 0.0, 0.0, proj)?.x_star));
        chains.maybe_snapshot(config, t - 1)?;
    }
    chains.finish(Some(constraint))
}
