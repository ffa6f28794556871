//! End-to-end experiment pipelines.
//!
//! The two-dimensional study trains a denoiser per dataset, draws one prior
//! pool per dataset, builds a rejection-sampling oracle for every GRF
//! constraint from that pool and scores each sampler against it. The KS
//! study trains a denoiser on coarse trajectories, takes test trajectories
//! from the learned prior and scores observation-conditioned ensembles.
//!
//! All randomness is derived from the study seed with [`derive_seed`], so a
//! study is a pure function of its configuration.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::constraints::{Constraint, GrfConstraint, GrfHyper, ObservationConstraint, ObservationMap};
use crate::datagen::{augment_ks, prepare_ks_dataset, KsParams};
use crate::datagen::{BananaGmm, Checkerboard2D, Data2D};
use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::metrics::{
    continuity_norms, ensemble_scores, knn_cross_edge_rate, sinkhorn_divergence, violation_stats_from_values,
    CrossEdgeParams, EnsembleScores, SinkhornParams, SinkhornResult, ViolationStats,
};
use crate::nn::{train, DenoiserNet, NetConfig, TrainConfig, TrainReport};
use crate::oracle::{rejection_from_pool, OracleConfig, OracleSample};
use crate::projection::{LambdaSchedule, ProjectionConfig};
use crate::rng;
use crate::samplers::{ppr_sample_with_rounds, sample_method, Method, SampleRun, SamplerConfig};
use crate::sde::marginal_cloud;

/// Independent seed for the purpose `tag` and item `index`.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    rng::substream(seed, (tag << 32) | index).random()
}

mod tag {
    pub const TRAIN_DATA: u64 = 1;
    pub const NET_INIT: u64 = 2;
    pub const TRAIN: u64 = 3;
    pub const CONSTRAINT: u64 = 4;
    pub const POOL: u64 = 5;
    pub const SAMPLE: u64 = 6;
    pub const SCORE: u64 = 7;
    pub const TUNE: u64 = 8;
    pub const KS_DATA: u64 = 9;
    pub const KS_TRUTH: u64 = 10;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub hidden: Vec<usize>,
    #[serde(default = "default_embed")]
    pub embed_features: usize,
    pub train: TrainConfig,
}

fn default_embed() -> usize {
    16
}

impl NetSpec {
    pub fn net_config(&self, dim: usize) -> NetConfig {
        NetConfig {
            embed_features: self.embed_features,
            ..NetConfig::new(dim, self.hidden.clone())
        }
    }

    /// Initializes from `seed` and trains on `data`; the training seed in
    /// `self.train` is replaced by one derived from `seed`.
    pub fn fit(&self, data: &PointCloud, seed: u64) -> Result<(DenoiserNet, TrainReport)> {
        let mut init = rng::seeded(derive_seed(seed, tag::NET_INIT, 0));
        let mut net = DenoiserNet::new(self.net_config(data.dim()), &mut init)?;
        let cfg = TrainConfig {
            seed: derive_seed(seed, tag::TRAIN, 0),
            ..self.train.clone()
        };
        let report = train(&mut net, data, &cfg)?;
        Ok((net, report))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSpec {
    pub cross_edge: CrossEdgeParams,
    pub sinkhorn: SinkhornParams,
    /// Points per cloud entering the Sinkhorn divergence.
    pub sinkhorn_points: usize,
}

impl Default for ScoreSpec {
    fn default() -> Self {
        Self {
            cross_edge: CrossEdgeParams::default(),
            sinkhorn: SinkhornParams::default(),
            sinkhorn_points: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Data2dConfig {
    pub datasets: Vec<Data2D>,
    pub train_size: usize,
    pub net: NetSpec,
    pub constraints_per_dataset: usize,
    #[serde(default)]
    pub grf: GrfHyper,
    pub oracle: OracleConfig,
    /// Prior samples drawn once per dataset and shared by every oracle.
    pub prior_pool: usize,
    pub sampler: SamplerConfig,
    pub methods: Vec<Method>,
    pub samples: usize,
    /// Noise levels at which intermediate clouds are compared with the
    /// oracle marginal; `0` is the final cloud.
    pub snapshot_sigmas: Vec<f64>,
    /// Candidate DPS scales; the one with the lowest median violation on a
    /// pilot run is used for each constraint.
    pub dps_zeta_grid: Vec<f64>,
    pub tuning_samples: usize,
    #[serde(default)]
    pub scores: ScoreSpec,
    pub seed: u64,
}

/// Baseline projections get eight times the PPR inner budget.
pub fn data2d_sampler() -> SamplerConfig {
    let mut s = SamplerConfig::default();
    s.ppr.projection = ProjectionConfig {
        lambda: LambdaSchedule::Data2d,
        ..ProjectionConfig::default()
    };
    s.baselines.x0proj.max_iters = 64;
    s.baselines.xtproj.max_iters = 64;
    s
}

impl Default for Data2dConfig {
    fn default() -> Self {
        Self {
            datasets: vec![
                Data2D::Checkerboard(Checkerboard2D::default()),
                Data2D::Banana(BananaGmm::default()),
            ],
            train_size: 100_000,
            net: NetSpec {
                hidden: vec![64; 4],
                embed_features: default_embed(),
                train: TrainConfig {
                    steps: 15_000,
                    ..TrainConfig::default()
                },
            },
            constraints_per_dataset: 12,
            grf: GrfHyper::default(),
            oracle: OracleConfig {
                target_count: 4096,
                ..OracleConfig::default()
            },
            prior_pool: 1 << 17,
            sampler: data2d_sampler(),
            methods: Method::ALL.to_vec(),
            samples: 4096,
            snapshot_sigmas: vec![2.0, 0.5, 0.1, 0.0],
            dps_zeta_grid: vec![1e-3, 1e-2, 1e-1, 1.0],
            tuning_samples: 256,
            scores: ScoreSpec::default(),
            seed: 0,
        }
    }
}

impl Data2dConfig {
    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() || self.methods.is_empty() {
            return Err(Error::Config("need at least one dataset and one method".into()));
        }
        if self.samples == 0 || self.prior_pool == 0 || self.train_size == 0 {
            return Err(Error::Config("sample counts must be positive".into()));
        }
        if self.methods.contains(&Method::Dps) && self.dps_zeta_grid.is_empty() {
            return Err(Error::Config("DPS needs at least one candidate scale".into()));
        }
        if self.snapshot_sigmas.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Config("snapshot levels must be nonnegative".into()));
        }
        self.oracle.validate()?;
        self.sampler.validate()
    }

    pub fn sampler_with_snapshots(&self) -> SamplerConfig {
        self.sampler.clone().with_snapshots_at(&self.snapshot_sigmas)
    }
}

/// Trained prior for one dataset plus its shared pool of prior samples.
#[derive(Debug, Clone)]
pub struct Data2dPrior {
    pub dataset: Data2D,
    pub index: usize,
    pub net: DenoiserNet,
    pub report: TrainReport,
    pub pool: PointCloud,
}

pub fn train_data2d_net(cfg: &Data2dConfig, index: usize) -> Result<(DenoiserNet, TrainReport)> {
    let dataset = dataset_at(cfg, index)?;
    let mut r = rng::seeded(derive_seed(cfg.seed, tag::TRAIN_DATA, index as u64));
    let data = dataset.sample(cfg.train_size, &mut r)?;
    cfg.net.fit(&data, derive_seed(cfg.seed, tag::NET_INIT, index as u64))
}

pub fn data2d_prior_pool(cfg: &Data2dConfig, net: &DenoiserNet, index: usize) -> Result<PointCloud> {
    let seed = derive_seed(cfg.seed, tag::POOL, index as u64);
    let run = sample_method(Method::Pc, net, &crate::constraints::NoConstraint { dim: 2 }, &cfg.sampler, cfg.prior_pool, seed)?;
    Ok(run.valid_cloud())
}

pub fn prepare_data2d_prior(cfg: &Data2dConfig, index: usize) -> Result<Data2dPrior> {
    let (net, report) = train_data2d_net(cfg, index)?;
    let pool = data2d_prior_pool(cfg, &net, index)?;
    Ok(Data2dPrior {
        dataset: dataset_at(cfg, index)?.clone(),
        index,
        net,
        report,
        pool,
    })
}

fn dataset_at(cfg: &Data2dConfig, index: usize) -> Result<&Data2D> {
    cfg.datasets.get(index).ok_or(Error::Range {
        index,
        max: cfg.datasets.len().saturating_sub(1),
    })
}

pub fn data2d_constraints(cfg: &Data2dConfig, index: usize) -> Result<Vec<GrfConstraint>> {
    (0..cfg.constraints_per_dataset)
        .map(|k| {
            let stream = (index * cfg.constraints_per_dataset + k) as u64;
            GrfConstraint::sample(&cfg.grf, &mut rng::seeded(derive_seed(cfg.seed, tag::CONSTRAINT, stream)))
        })
        .collect()
}

pub fn build_oracle<C: Constraint + ?Sized>(prior: &Data2dPrior, constraint: &C, cfg: &Data2dConfig) -> Result<OracleSample> {
    rejection_from_pool(&prior.pool, constraint, &cfg.oracle)
}

/// Picks the DPS scale with the lowest median violation over a pilot run;
/// candidates whose chains fail are ranked after those that do not.
pub fn tune_dps_zeta<D, C>(
    net: &D,
    constraint: &C,
    sampler: &SamplerConfig,
    grid: &[f64],
    n: usize,
    seed: u64,
) -> Result<(f64, Vec<(f64, f64)>)>
where
    D: Denoiser + ?Sized,
    C: Constraint + ?Sized,
{
    let mut trials = Vec::with_capacity(grid.len());
    let mut best: Option<(usize, f64, f64)> = None;
    for &zeta in grid {
        let mut cfg = sampler.clone();
        cfg.baselines.dps_zeta = zeta;
        cfg.snapshot_steps.clear();
        let run = sample_method(Method::Dps, net, constraint, &cfg, n, seed)?;
        let valid = run.valid_violations();
        let median = if valid.is_empty() {
            f64::INFINITY
        } else {
            violation_stats_from_values(&valid)?.median
        };
        trials.push((zeta, median));
        let key = (run.failures.len(), median);
        if best.is_none_or(|(f, m, _)| key.0 < f || (key.0 == f && key.1 < m)) {
            best = Some((key.0, key.1, zeta));
        }
    }
    let (_, _, zeta) = best.ok_or_else(|| Error::Config("empty DPS scale grid".into()))?;
    Ok((zeta, trials))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotScore {
    pub step: usize,
    pub sigma: f64,
    pub cross_edge: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunScores {
    pub label: String,
    pub violation: ViolationStats,
    pub snapshots: Vec<SnapshotScore>,
    pub sinkhorn: SinkhornResult,
    pub failures: usize,
    pub elapsed_secs: f64,
}

impl RunScores {
    /// Cross-edge rate of the final cloud.
    pub fn final_cross_edge(&self) -> Option<f64> {
        self.snapshots.iter().find(|s| s.step == 0).map(|s| s.cross_edge)
    }
}

fn first_rows(cloud: &PointCloud, n: usize) -> PointCloud {
    cloud.select(&(0..cloud.len().min(n)).collect::<Vec<_>>())
}

/// Scores a run against an oracle cloud: violation statistics of the valid
/// samples, cross-edge rate of each snapshot against the oracle pushed to
/// the snapshot's noise level, and Sinkhorn divergence of the final clouds.
pub fn score_run<C, R>(
    label: &str,
    run: &SampleRun,
    oracle: &PointCloud,
    constraint: &C,
    spec: &ScoreSpec,
    rng: &mut R,
) -> Result<RunScores>
where
    C: Constraint + ?Sized,
    R: Rng + ?Sized,
{
    let valid = run.valid_indices();
    if valid.is_empty() {
        return Err(Error::Input(format!("every chain of '{label}' failed")));
    }
    let values = if run.violations.is_empty() {
        valid.iter().map(|&i| constraint.eval(run.cloud.row(i))).collect::<Result<Vec<_>>>()?
    } else {
        run.valid_violations()
    };
    let violation = violation_stats_from_values(&values)?;
    let mut params = spec.cross_edge;
    params.subsample = params.subsample.min(valid.len()).min(oracle.len());
    let mut snapshots = Vec::with_capacity(run.snapshots.len());
    for s in &run.snapshots {
        let reference = if s.sigma > 0.0 {
            marginal_cloud(oracle, s.sigma, rng)?
        } else {
            oracle.clone()
        };
        let cloud = s.cloud.select(&valid);
        snapshots.push(SnapshotScore {
            step: s.step,
            sigma: s.sigma,
            cross_edge: knn_cross_edge_rate(&cloud, &reference, &params, rng)?,
        });
    }
    let final_cloud = run.cloud.select(&valid);
    let sinkhorn = sinkhorn_divergence(
        &first_rows(&final_cloud, spec.sinkhorn_points),
        &first_rows(oracle, spec.sinkhorn_points),
        &spec.sinkhorn,
    )?;
    Ok(RunScores {
        label: label.to_string(),
        violation,
        snapshots,
        sinkhorn,
        failures: run.failures.len(),
        elapsed_secs: run.elapsed_secs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub dataset: String,
    pub constraint_index: usize,
    pub oracle_acceptance: f64,
    pub dps_zeta: Option<f64>,
    pub runs: Vec<RunScores>,
}

impl CaseResult {
    pub fn run(&self, label: &str) -> Option<&RunScores> {
        self.runs.iter().find(|r| r.label == label)
    }
}

/// Seeds for the case `constraint_index` of dataset `dataset_index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CaseSeeds {
    pub sample: u64,
    pub score: u64,
    pub tune: u64,
}

pub fn data2d_case_seeds(cfg: &Data2dConfig, dataset_index: usize, constraint_index: usize) -> CaseSeeds {
    let case = (dataset_index * cfg.constraints_per_dataset + constraint_index) as u64;
    CaseSeeds {
        sample: derive_seed(cfg.seed, tag::SAMPLE, case),
        score: derive_seed(cfg.seed, tag::SCORE, case),
        tune: derive_seed(cfg.seed, tag::TUNE, case),
    }
}

/// Every configured method on one constraint, with the DPS scale tuned
/// first when DPS is among the methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRuns {
    pub dps_zeta: Option<f64>,
    pub runs: Vec<(Method, SampleRun)>,
}

pub fn sample_data2d_case<D: Denoiser + ?Sized>(
    cfg: &Data2dConfig,
    net: &D,
    dataset_index: usize,
    constraint_index: usize,
    constraint: &GrfConstraint,
) -> Result<CaseRuns> {
    let seeds = data2d_case_seeds(cfg, dataset_index, constraint_index);
    let mut sampler = cfg.sampler_with_snapshots();
    let mut dps_zeta = None;
    if cfg.methods.contains(&Method::Dps) {
        let (zeta, _) = tune_dps_zeta(net, constraint, &sampler, &cfg.dps_zeta_grid, cfg.tuning_samples, seeds.tune)?;
        sampler.baselines.dps_zeta = zeta;
        dps_zeta = Some(zeta);
    }
    let runs = cfg
        .methods
        .iter()
        .map(|&m| Ok((m, sample_method(m, net, constraint, &sampler, cfg.samples, seeds.sample)?)))
        .collect::<Result<_>>()?;
    Ok(CaseRuns { dps_zeta, runs })
}

/// Scores the runs of one case in order against its oracle.
pub fn score_data2d_case(
    cfg: &Data2dConfig,
    dataset: &Data2D,
    dataset_index: usize,
    constraint_index: usize,
    constraint: &GrfConstraint,
    oracle: &OracleSample,
    runs: &CaseRuns,
) -> Result<CaseResult> {
    let mut score_rng = rng::seeded(data2d_case_seeds(cfg, dataset_index, constraint_index).score);
    let scores = runs
        .runs
        .iter()
        .map(|(m, run)| score_run(m.name(), run, &oracle.cloud, constraint, &cfg.scores, &mut score_rng))
        .collect::<Result<_>>()?;
    Ok(CaseResult {
        dataset: dataset.name().to_string(),
        constraint_index,
        oracle_acceptance: oracle.acceptance_rate(),
        dps_zeta: runs.dps_zeta,
        runs: scores,
    })
}

/// Runs and scores every configured method on one constraint.
pub fn run_data2d_case(
    cfg: &Data2dConfig,
    prior: &Data2dPrior,
    constraint_index: usize,
    constraint: &GrfConstraint,
    oracle: &OracleSample,
) -> Result<CaseResult> {
    let runs = sample_data2d_case(cfg, &prior.net, prior.index, constraint_index, constraint)?;
    score_data2d_case(cfg, &prior.dataset, prior.index, constraint_index, constraint, oracle, &runs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Data2dStudy {
    pub cases: Vec<CaseResult>,
    pub final_train_loss: Vec<f64>,
}

/// Full two-dimensional study; `progress` sees each case as it completes.
pub fn run_data2d(cfg: &Data2dConfig, progress: &mut dyn FnMut(&CaseResult)) -> Result<Data2dStudy> {
    cfg.validate()?;
    let mut cases = Vec::new();
    let mut final_train_loss = Vec::new();
    for index in 0..cfg.datasets.len() {
        let prior = prepare_data2d_prior(cfg, index)?;
        final_train_loss.push(tail_loss(&prior.report));
        for (k, c) in data2d_constraints(cfg, index)?.iter().enumerate() {
            let oracle = build_oracle(&prior, c, cfg)?;
            let case = run_data2d_case(cfg, &prior, k, c, &oracle)?;
            progress(&case);
            cases.push(case);
        }
    }
    Ok(Data2dStudy { cases, final_train_loss })
}

/// Mean loss over the last tenth of training.
pub fn tail_loss(report: &TrainReport) -> f64 {
    let h = &report.loss_history;
    if h.is_empty() {
        return f64::NAN;
    }
    let tail = &h[h.len() - (h.len() / 10).max(1)..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    /// Project-renoise rounds `M`.
    RenoiseM,
    /// Langevin corrector steps `N`.
    CorrectN,
    /// Optimizer iterations inside each projection.
    ProjSteps,
}

impl AblationAxis {
    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::RenoiseM => "renoise_m",
            AblationAxis::CorrectN => "correct_n",
            AblationAxis::ProjSteps => "proj_steps",
        }
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [AblationAxis::RenoiseM, AblationAxis::CorrectN, AblationAxis::ProjSteps]
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation axis '{s}'")))
    }
}

pub fn validate_ablation(axis: AblationAxis, values: &[usize]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Config("ablation needs at least one value".into()));
    }
    if axis == AblationAxis::ProjSteps && values.contains(&0) {
        return Err(Error::Config("projection steps must be positive".into()));
    }
    Ok(())
}

/// PPR configuration with one ablation axis set to `value`; the returned
/// round count may be zero.
pub fn ablation_sampler(base: &SamplerConfig, axis: AblationAxis, value: usize) -> (SamplerConfig, usize) {
    let mut cfg = base.clone();
    match axis {
        AblationAxis::RenoiseM => return (cfg, value),
        AblationAxis::CorrectN => cfg.correct_steps = value,
        AblationAxis::ProjSteps => cfg.ppr.projection.max_iters = value,
    }
    let rounds = cfg.ppr.inner_steps;
    (cfg, rounds)
}

/// PPR on one constraint for each value of `axis`, all on the same seeds.
pub fn sample_ablation_case<D: Denoiser + ?Sized>(
    cfg: &Data2dConfig,
    net: &D,
    dataset_index: usize,
    constraint_index: usize,
    constraint: &GrfConstraint,
    axis: AblationAxis,
    values: &[usize],
) -> Result<Vec<(usize, SampleRun)>> {
    validate_ablation(axis, values)?;
    let seeds = data2d_case_seeds(cfg, dataset_index, constraint_index);
    let base = cfg.sampler_with_snapshots();
    values
        .iter()
        .map(|&v| {
            let (sampler, rounds) = ablation_sampler(&base, axis, v);
            Ok((v, ppr_sample_with_rounds(net, constraint, &sampler, rounds, cfg.samples, seeds.sample)?))
        })
        .collect()
}

pub fn ablation_label(axis: AblationAxis, value: usize) -> String {
    format!("ppr-{axis}-{value}")
}

/// Each ablation run is scored with the case's score stream restarted, so
/// the rows differ only through the samples.
#[allow(clippy::too_many_arguments)]
pub fn score_ablation_case(
    cfg: &Data2dConfig,
    dataset_index: usize,
    constraint_index: usize,
    constraint: &GrfConstraint,
    oracle: &OracleSample,
    axis: AblationAxis,
    runs: &[(usize, SampleRun)],
) -> Result<Vec<(usize, RunScores)>> {
    let seed = data2d_case_seeds(cfg, dataset_index, constraint_index).score;
    runs.iter()
        .map(|(v, run)| {
            let mut score_rng = rng::seeded(seed);
            let label = ablation_label(axis, *v);
            Ok((*v, score_run(&label, run, &oracle.cloud, constraint, &cfg.scores, &mut score_rng)?))
        })
        .collect()
}

pub fn run_ablation_case(
    cfg: &Data2dConfig,
    prior: &Data2dPrior,
    constraint_index: usize,
    constraint: &GrfConstraint,
    oracle: &OracleSample,
    axis: AblationAxis,
    values: &[usize],
) -> Result<Vec<(usize, RunScores)>> {
    let runs = sample_ablation_case(cfg, &prior.net, prior.index, constraint_index, constraint, axis, values)?;
    score_ablation_case(cfg, prior.index, constraint_index, constraint, oracle, axis, &runs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KsConfig {
    pub solver: KsParams,
    pub train_trajectories: usize,
    /// Rows of the fine solution kept before coarsening.
    pub window: (usize, usize),
    /// Coarse `(time, space)` resolution.
    pub resolution: (usize, usize),
    /// Train on every cyclic shift and the reflection of each trajectory.
    pub augment: bool,
    pub net: NetSpec,
    pub test_cases: usize,
    pub ensemble: usize,
    pub observed_rows: Vec<usize>,
    pub map: ObservationMap,
    pub sampler: SamplerConfig,
    pub methods: Vec<Method>,
    pub dps_zeta_grid: Vec<f64>,
    pub seed: u64,
}

impl Default for KsConfig {
    fn default() -> Self {
        let mut sampler = SamplerConfig::default();
        sampler.baselines.x0proj.max_iters = 64;
        sampler.baselines.xtproj.max_iters = 64;
        Self {
            solver: KsParams::default(),
            train_trajectories: 64,
            window: (256, 512),
            resolution: (32, 32),
            augment: true,
            net: NetSpec {
                hidden: vec![2048],
                embed_features: default_embed(),
                train: TrainConfig {
                    batch: 64,
                    steps: 6000,
                    lr: 1e-3,
                    ..TrainConfig::default()
                },
            },
            test_cases: 8,
            ensemble: 8,
            observed_rows: vec![0],
            map: ObservationMap::Identity,
            sampler,
            methods: Method::ALL.to_vec(),
            dps_zeta_grid: vec![1e-3, 1e-2, 1e-1, 1.0],
            seed: 0,
        }
    }
}

impl KsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.test_cases == 0 || self.train_trajectories == 0 {
            return Err(Error::Config("need methods, test cases and training trajectories".into()));
        }
        if self.ensemble < 2 {
            return Err(Error::Config("ensembles need at least two members".into()));
        }
        if self.observed_rows.is_empty() || self.observed_rows.iter().any(|&r| r >= self.resolution.0) {
            return Err(Error::Config("observed rows must be inside the coarse field".into()));
        }
        if self.methods.contains(&Method::Dps) && self.dps_zeta_grid.is_empty() {
            return Err(Error::Config("DPS needs at least one candidate scale".into()));
        }
        self.sampler.validate()
    }

    pub fn dim(&self) -> usize {
        self.resolution.0 * self.resolution.1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsMethodScores {
    pub method: Method,
    pub violation: ViolationStats,
    pub ensemble: EnsembleScores,
    /// Mean over samples of the mean consecutive-row step norm.
    pub continuity_mean: f64,
    /// Mean over samples of the largest consecutive-row step norm.
    pub continuity_max: f64,
    pub failures: usize,
    pub elapsed_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsStudy {
    pub final_train_loss: f64,
    pub data_std: f64,
    pub dps_zeta: Option<f64>,
    pub methods: Vec<KsMethodScores>,
}

impl KsStudy {
    pub fn method(&self, m: Method) -> Option<&KsMethodScores> {
        self.methods.iter().find(|s| s.method == m)
    }
}

/// Simulates, coarsens, standardizes and (optionally) augments the training
/// set, then trains the denoiser.
pub fn train_ks_net(cfg: &KsConfig) -> Result<(DenoiserNet, TrainReport, f64)> {
    let mut r = rng::seeded(derive_seed(cfg.seed, tag::KS_DATA, 0));
    let data = prepare_ks_dataset(cfg.train_trajectories, &cfg.solver, cfg.window, cfg.resolution, &mut r)?;
    let mut cloud = data.to_cloud()?;
    if cfg.augment {
        cloud = augment_ks(&cloud, cfg.resolution.0, cfg.resolution.1)?;
    }
    let (net, report) = cfg.net.fit(&cloud, derive_seed(cfg.seed, tag::NET_INIT, 0))?;
    Ok((net, report, data.std))
}

/// Test truths drawn from the learned prior.
pub fn ks_truths(cfg: &KsConfig, net: &DenoiserNet) -> Result<PointCloud> {
    let run = crate::samplers::pc_sample(net, &cfg.sampler, cfg.test_cases, derive_seed(cfg.seed, tag::KS_TRUTH, 0))?;
    if !run.failures.is_empty() {
        return Err(Error::Input("prior sampling failed for a test trajectory".into()));
    }
    Ok(run.cloud)
}

pub fn ks_constraint(cfg: &KsConfig, truth: &[f64]) -> Result<ObservationConstraint> {
    ObservationConstraint::rows_of(truth, cfg.resolution.1, &cfg.observed_rows, cfg.map)
}

/// One ensemble per test case and method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsRuns {
    pub dps_zeta: Option<f64>,
    /// Per method, one run per test case.
    pub runs: Vec<(Method, Vec<SampleRun>)>,
}

/// Samples an ensemble per test case with every method.
pub fn sample_ks<D: Denoiser + ?Sized>(cfg: &KsConfig, net: &D, truths: &PointCloud) -> Result<KsRuns> {
    cfg.validate()?;
    let constraints: Vec<ObservationConstraint> = truths.rows().map(|t| ks_constraint(cfg, t)).collect::<Result<_>>()?;
    if constraints.is_empty() {
        return Err(Error::Input("no test trajectories".into()));
    }
    let mut sampler = cfg.sampler.clone();
    sampler.snapshot_steps.clear();
    let mut dps_zeta = None;
    if cfg.methods.contains(&Method::Dps) {
        let (zeta, _) = tune_dps_zeta(
            net,
            &constraints[0],
            &sampler,
            &cfg.dps_zeta_grid,
            cfg.ensemble,
            derive_seed(cfg.seed, tag::TUNE, 0),
        )?;
        sampler.baselines.dps_zeta = zeta;
        dps_zeta = Some(zeta);
    }
    let mut runs = Vec::with_capacity(cfg.methods.len());
    for &m in &cfg.methods {
        let per_case = constraints
            .iter()
            .enumerate()
            .map(|(k, c)| sample_method(m, net, c, &sampler, cfg.ensemble, derive_seed(cfg.seed, tag::SAMPLE, k as u64)))
            .collect::<Result<_>>()?;
        runs.push((m, per_case));
    }
    Ok(KsRuns { dps_zeta, runs })
}

/// Ensemble, continuity and violation scores of sampled ensembles.
pub fn score_ks(cfg: &KsConfig, truths: &PointCloud, runs: &KsRuns) -> Result<Vec<KsMethodScores>> {
    let constraints: Vec<ObservationConstraint> = truths.rows().map(|t| ks_constraint(cfg, t)).collect::<Result<_>>()?;
    let cols = cfg.resolution.1;
    let mut out = Vec::with_capacity(runs.runs.len());
    for (m, per_case) in &runs.runs {
        if per_case.len() != constraints.len() {
            return Err(Error::Dimension {
                expected: constraints.len(),
                got: per_case.len(),
            });
        }
        let mut members = Vec::with_capacity(truths.len() * cfg.ensemble * cfg.dim());
        let mut violations = Vec::new();
        let (mut cont_mean, mut cont_max) = (0.0, 0.0);
        let (mut failures, mut elapsed) = (0, 0.0);
        for (run, c) in per_case.iter().zip(&constraints) {
            failures += run.failures.len();
            elapsed += run.elapsed_secs;
            for row in run.cloud.rows() {
                violations.push(c.eval(row)?);
                let s = continuity_norms(row, cols)?;
                cont_mean += s.mean_step_norm;
                cont_max += s.max_step_norm;
            }
            members.extend_from_slice(run.cloud.as_slice());
        }
        let members_per_case = per_case.first().map_or(0, |r| r.cloud.len());
        let n = (truths.len() * members_per_case) as f64;
        out.push(KsMethodScores {
            method: *m,
            violation: violation_stats_from_values(&violations)?,
            ensemble: ensemble_scores(&members, truths.as_slice(), truths.len(), members_per_case)?,
            continuity_mean: cont_mean / n,
            continuity_max: cont_max / n,
            failures,
            elapsed_secs: elapsed,
        });
    }
    Ok(out)
}

pub fn run_ks_with_net(cfg: &KsConfig, net: &DenoiserNet) -> Result<(Option<f64>, Vec<KsMethodScores>)> {
    let truths = ks_truths(cfg, net)?;
    let runs = sample_ks(cfg, net, &truths)?;
    Ok((runs.dps_zeta, score_ks(cfg, &truths, &runs)?))
}

pub fn run_ks(cfg: &KsConfig) -> Result<KsStudy> {
    cfg.validate()?;
    let (net, report, data_std) = train_ks_net(cfg)?;
    let (dps_zeta, methods) = run_ks_with_net(cfg, &net)?;
    Ok(KsStudy {
        final_train_loss: tail_loss(&report),
        data_std,
        dps_zeta,
        methods,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::GaussianDenoiser;
    use crate::sde::NoiseSchedule;

    fn tiny_data2d() -> Data2dConfig {
        let mut sampler = data2d_sampler();
        sampler.schedule = NoiseSchedule::log_linear(8, 0.01, 10.0).unwrap();
        sampler.ppr.projection.max_iters = 2;
        sampler.baselines.x0proj.max_iters = 4;
        sampler.baselines.xtproj.max_iters = 4;
        Data2dConfig {
            datasets: vec![Data2D::Banana(BananaGmm::default())],
            train_size: 512,
            net: NetSpec {
                hidden: vec![8, 8],
                embed_features: 4,
                train: TrainConfig {
                    steps: 20,
                    batch: 32,
                    ..TrainConfig::default()
                },
            },
            constraints_per_dataset: 2,
            grf: GrfHyper::default(),
            oracle: OracleConfig {
                target_count: 64,
                refine_steps: 5,
                ..OracleConfig::default()
            },
            prior_pool: 2048,
            sampler,
            methods: Method::ALL.to_vec(),
            samples: 64,
            snapshot_sigmas: vec![1.0, 0.0],
            dps_zeta_grid: vec![0.01, 0.1],
            tuning_samples: 16,
            scores: ScoreSpec {
                cross_edge: CrossEdgeParams { k: 3, subsample: 64, repeats: 1 },
                sinkhorn: SinkhornParams {
                    max_iters: 200,
                    ..SinkhornParams::default()
                },
                sinkhorn_points: 32,
            },
            seed: 3,
        }
    }

    #[test]
    fn derived_seeds_differ_by_tag_and_index() {
        let a = derive_seed(1, 2, 3);
        assert_eq!(a, derive_seed(1, 2, 3));
        assert_ne!(a, derive_seed(1, 2, 4));
        assert_ne!(a, derive_seed(1, 3, 3));
        assert_ne!(a, derive_seed(2, 2, 3));
    }

    #[test]
    fn tiny_study_is_deterministic() {
        let cfg = tiny_data2d();
        let mut seen = 0;
        let a = run_data2d(&cfg, &mut |_| seen += 1).unwrap();
        assert_eq!(seen, 2);
        assert_eq!(a.cases.len(), 2);
        for case in &a.cases {
            assert_eq!(case.runs.len(), Method::ALL.len());
            assert!(case.dps_zeta.is_some());
            let ppr = case.run("ppr").unwrap();
            assert_eq!(ppr.snapshots.len(), 2);
            assert!(ppr.final_cross_edge().is_some());
        }
        let b = run_data2d(&cfg, &mut |_| ()).unwrap();
        for (x, y) in a.cases.iter().zip(&b.cases) {
            for (r, s) in x.runs.iter().zip(&y.runs) {
                assert_eq!(r.violation, s.violation);
                assert_eq!(r.snapshots, s.snapshots);
                assert_eq!(r.sinkhorn.value.to_bits(), s.sinkhorn.value.to_bits());
            }
        }
    }

    #[test]
    fn ablation_runs_share_seeds() {
        let cfg = tiny_data2d();
        let prior = prepare_data2d_prior(&cfg, 0).unwrap();
        let c = &data2d_constraints(&cfg, 0).unwrap()[0];
        let oracle = build_oracle(&prior, c, &cfg).unwrap();
        let rows = run_ablation_case(&cfg, &prior, 0, c, &oracle, AblationAxis::RenoiseM, &[0, 1, 2]).unwrap();
        assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(rows[2].1.label, "ppr-renoise_m-2");
        let main = run_data2d_case(&cfg, &prior, 0, c, &oracle).unwrap();
        assert_eq!(main.run("ppr").unwrap().violation, rows[2].1.violation);
        assert!(run_ablation_case(&cfg, &prior, 0, c, &oracle, AblationAxis::ProjSteps, &[]).is_err());
        assert!(validate_ablation(AblationAxis::ProjSteps, &[0]).is_err());
    }

    #[test]
    fn axis_names_round_trip() {
        for a in [AblationAxis::RenoiseM, AblationAxis::CorrectN, AblationAxis::ProjSteps] {
            assert_eq!(a.name().parse::<AblationAxis>().unwrap(), a);
        }
        assert!("steps".parse::<AblationAxis>().is_err());
    }

    #[test]
    fn dps_tuning_prefers_feasible_scale() {
        let den = GaussianDenoiser::standard(1);
        let c = crate::constraints::LinearConstraint { a: vec![1.0], b: 1.0 };
        let mut sampler = SamplerConfig::default();
        sampler.schedule = NoiseSchedule::log_linear(16, 0.01, 10.0).unwrap();
        let (zeta, trials) = tune_dps_zeta(&den, &c, &sampler, &[0.0, 0.05], 64, 0).unwrap();
        assert_eq!(trials.len(), 2);
        assert_eq!(zeta, 0.05);
        assert!(trials[1].1 < trials[0].1);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = tiny_data2d();
        cfg.methods.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_data2d();
        cfg.dps_zeta_grid.clear();
        assert!(cfg.validate().is_err());
        let mut ks = KsConfig::default();
        ks.observed_rows = vec![99];
        assert!(ks.validate().is_err());
        ks.observed_rows = vec![0];
        ks.ensemble = 1;
        assert!(ks.validate().is_err());
    }

    #[test]
    fn tiny_ks_study_runs() {
        let mut sampler = SamplerConfig::default();
        sampler.schedule = NoiseSchedule::log_linear(6, 0.01, 10.0).unwrap();
        sampler.ppr.projection.max_iters = 2;
        let cfg = KsConfig {
            solver: KsParams {
                grid: 32,
                length: 22.0,
                steps: 64,
                ..KsParams::default()
            },
            train_trajectories: 2,
            window: (32, 64),
            resolution: (8, 8),
            augment: true,
            net: NetSpec {
                hidden: vec![16],
                embed_features: 4,
                train: TrainConfig {
                    steps: 10,
                    batch: 16,
                    ..TrainConfig::default()
                },
            },
            test_cases: 2,
            ensemble: 3,
            observed_rows: vec![0],
            map: ObservationMap::Identity,
            sampler,
            methods: vec![Method::Pc, Method::Ppr, Method::Dps],
            dps_zeta_grid: vec![0.1],
            seed: 1,
        };
        let study = run_ks(&cfg).unwrap();
        assert_eq!(study.methods.len(), 3);
        let ppr = study.method(Method::Ppr).unwrap();
        assert_eq!(ppr.ensemble.case_count, 2);
        assert_eq!(ppr.ensemble.ensemble_size, 3);
        assert!(ppr.violation.median < study.method(Method::Pc).unwrap().violation.median);
        assert_eq!(study.dps_zeta, Some(0.1));
    }
}
