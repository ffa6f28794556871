//! Stages of the two-dimensional study.

use anyhow::{Context, Result};
use ppr_core::constraints::GrfConstraint;
use ppr_core::io::{ArrayFile, NamedArray};
use ppr_core::oracle::{rejection_from_pool, OracleSample};
use ppr_core::samplers::SampleRun;
use ppr_core::study::{
    data2d_constraints, data2d_prior_pool, sample_ablation_case, sample_data2d_case, score_ablation_case,
    score_data2d_case, tail_loss, train_data2d_net, validate_ablation, AblationAxis, CaseResult, CaseRuns, RunScores,
};
use ppr_core::{Data2dConfig, DenoiserNet, Method, PointCloud};
use serde::Serialize;
use serde_json::{json, Value};

use crate::cache::{bundle, unbundle, Cache};
use crate::config::content_hash;
use crate::output::Written;

struct Prior {
    net: DenoiserNet,
    loss: Vec<f64>,
    key: String,
}

fn stem(cfg: &Data2dConfig, i: usize) -> String {
    format!("d{i}-{}", cfg.datasets[i].name())
}

/// The config minus the scoring options, which never affect samples.
fn sampling_view(cfg: &Data2dConfig) -> Value {
    let mut v = serde_json::to_value(cfg).expect("config serializes");
    v.as_object_mut().expect("config is an object").remove("scores");
    v
}

fn prior(cfg: &Data2dConfig, cache: &mut Cache, i: usize) -> Result<Prior> {
    let key = content_hash(&json!({
        "stage": "net",
        "dataset": cfg.datasets[i],
        "index": i,
        "train_size": cfg.train_size,
        "net": cfg.net,
        "seed": cfg.seed,
    }));
    let file = cache.get_or_compute("net", &key, || {
        eprintln!("[data2d] training {} denoiser", cfg.datasets[i].name());
        let (net, report) = train_data2d_net(cfg, i)?;
        let n = report.loss_history.len();
        Ok(net
            .to_array_file()
            .with_array(NamedArray::new("loss_history", vec![n], report.loss_history)?))
    })?;
    Ok(Prior {
        net: DenoiserNet::from_array_file(&file)?,
        loss: file.get("loss_history")?.data.clone(),
        key,
    })
}

fn pool(cfg: &Data2dConfig, cache: &mut Cache, prior: &Prior, i: usize) -> Result<(PointCloud, String)> {
    let key = content_hash(&json!({
        "stage": "pool",
        "net": prior.key,
        "sampler": cfg.sampler,
        "prior_pool": cfg.prior_pool,
        "seed": cfg.seed,
        "index": i,
    }));
    let file = cache.get_or_compute("pool", &key, || {
        eprintln!("[data2d] drawing {} prior samples for {}", cfg.prior_pool, cfg.datasets[i].name());
        let cloud = data2d_prior_pool(cfg, &prior.net, i)?;
        Ok(ArrayFile::new(json!({ "kind": "cloud" })).with_array(NamedArray::from_cloud("cloud", &cloud)))
    })?;
    Ok((file.cloud("cloud")?, key))
}

fn oracle(cfg: &Data2dConfig, cache: &mut Cache, pool: &(PointCloud, String), k: usize, c: &GrfConstraint) -> Result<OracleSample> {
    let key = content_hash(&json!({
        "stage": "oracle",
        "pool": pool.1,
        "constraint": c,
        "index": k,
        "oracle": cfg.oracle,
    }));
    let file = cache.get_or_compute("oracle", &key, || Ok(rejection_from_pool(&pool.0, c, &cfg.oracle)?.to_array_file()))?;
    Ok(OracleSample::from_array_file(&file)?)
}

fn case_runs(cfg: &Data2dConfig, cache: &mut Cache, prior: &Prior, i: usize, k: usize, c: &GrfConstraint) -> Result<CaseRuns> {
    let key = content_hash(&json!({
        "stage": "sample",
        "net": prior.key,
        "config": sampling_view(cfg),
        "dataset": i,
        "constraint": k,
    }));
    let file = cache.get_or_compute("sample", &key, || {
        eprintln!("[data2d] sampling {} constraint {k}", cfg.datasets[i].name());
        let runs = sample_data2d_case(cfg, &prior.net, i, k, c)?;
        let methods: Vec<Method> = runs.runs.iter().map(|(m, _)| *m).collect();
        let parts = runs.runs.iter().map(|(_, r)| r.to_array_file()).collect();
        Ok(bundle("case-runs", json!({ "dps_zeta": runs.dps_zeta, "methods": methods }), parts))
    })?;
    let (extra, parts) = unbundle(&file, "case-runs")?;
    let methods: Vec<Method> = serde_json::from_value(extra["methods"].clone()).context("bad method list in cache")?;
    let runs = methods
        .into_iter()
        .zip(&parts)
        .map(|(m, p)| Ok((m, SampleRun::from_array_file(p)?)))
        .collect::<Result<_>>()?;
    Ok(CaseRuns {
        dps_zeta: extra["dps_zeta"].as_f64(),
        runs,
    })
}

#[derive(Serialize)]
struct LossRow {
    dataset: String,
    step: usize,
    loss: f64,
}

pub fn train(cfg: &Data2dConfig, cache: &mut Cache, w: &mut Written) -> Result<()> {
    let mut rows = Vec::new();
    for i in 0..cfg.datasets.len() {
        let p = prior(cfg, cache, i)?;
        w.array(&format!("nets/{}.ppr", stem(cfg, i)), &p.net.to_array_file())?;
        rows.extend(p.loss.iter().enumerate().map(|(step, &loss)| LossRow {
            dataset: stem(cfg, i),
            step,
            loss,
        }));
    }
    w.csv("train_loss.csv", &rows)
}

#[derive(Serialize)]
struct OracleRow {
    dataset: String,
    constraint: usize,
    accepted: usize,
    proposals: usize,
    acceptance_rate: f64,
}

pub fn oracles(cfg: &Data2dConfig, cache: &mut Cache, w: &mut Written) -> Result<()> {
    let mut rows = Vec::new();
    for i in 0..cfg.datasets.len() {
        let p = prior(cfg, cache, i)?;
        let pool = pool(cfg, cache, &p, i)?;
        for (k, c) in data2d_constraints(cfg, i)?.iter().enumerate() {
            let o = oracle(cfg, cache, &pool, k, c)?;
            w.array(&format!("oracles/{}-c{k}.ppr", stem(cfg, i)), &o.to_array_file())?;
            rows.push(OracleRow {
                dataset: stem(cfg, i),
                constraint: k,
                accepted: o.cloud.len(),
                proposals: o.proposals,
                acceptance_rate: o.acceptance_rate(),
            });
        }
    }
    w.csv("oracles.csv", &rows)
}

#[derive(Serialize)]
struct SampleRow {
    dataset: String,
    constraint: usize,
    method: Method,
    samples: usize,
    failures: usize,
    dps_zeta: Option<f64>,
}

pub fn sample(cfg: &Data2dConfig, cache: &mut Cache, w: &mut Written) -> Result<()> {
    let mut rows = Vec::new();
    for i in 0..cfg.datasets.len() {
        let p = prior(cfg, cache, i)?;
        for (k, c) in data2d_constraints(cfg, i)?.iter().enumerate() {
            let runs = case_runs(cfg, cache, &p, i, k, c)?;
            for (m, run) in &runs.runs {
                w.array(&format!("samples/{}-c{k}-{m}.ppr", stem(cfg, i)), &run.to_array_file())?;
                rows.push(SampleRow {
                    dataset: stem(cfg, i),
                    constraint: k,
                    method: *m,
                    samples: run.cloud.len(),
                    failures: run.failures.len(),
                    dps_zeta: runs.dps_zeta,
                });
            }
        }
    }
    w.csv("samples.csv", &rows)
}

#[derive(Serialize)]
struct ResultRow {
    dataset: String,
    constraint: usize,
    method: String,
    failures: usize,
    violation_median: f64,
    violation_q25: f64,
    violation_q75: f64,
    violation_max: f64,
    violation_mean: f64,
    final_cross_edge: Option<f64>,
    sinkhorn: f64,
    sinkhorn_converged: bool,
    oracle_acceptance: f64,
    dps_zeta: Option<f64>,
}

#[derive(Serialize)]
struct CrossEdgeRow {
    dataset: String,
    constraint: usize,
    method: String,
    step: usize,
    sigma: f64,
    cross_edge: f64,
}

#[derive(Serialize)]
struct HistRow {
    dataset: String,
    constraint: usize,
    method: String,
    log10_lo: f64,
    log10_hi: f64,
    count: usize,
}

#[derive(Serialize)]
struct TimingRow {
    dataset: String,
    constraint: usize,
    method: String,
    elapsed_secs: f64,
}

#[derive(Serialize)]
struct Data2dResults<'a> {
    final_train_loss: Vec<f64>,
    cases: &'a [CaseResult],
}

pub fn score(cfg: &Data2dConfig, cache: &mut Cache, w: &mut Written) -> Result<()> {
    let mut cases = Vec::new();
    let mut losses = Vec::new();
    for i in 0..cfg.datasets.len() {
        let p = prior(cfg, cache, i)?;
        losses.push(tail_loss(&ppr_core::nn::TrainReport {
            loss_history: p.loss.clone(),
        }));
        let pool = pool(cfg, cache, &p, i)?;
        for (k, c) in data2d_constraints(cfg, i)?.iter().enumerate() {
            let o = oracle(cfg, cache, &pool, k, c)?;
            let runs = case_runs(cfg, cache, &p, i, k, c)?;
            eprintln!("[data2d] scoring {} constraint {k}", cfg.datasets[i].name());
            let mut case = score_data2d_case(cfg, &cfg.datasets[i], i, k, c, &o, &runs)?;
            case.dataset = stem(cfg, i);
            cases.push(case);
        }
    }
    let (mut results, mut edges, mut hist, mut timings) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for case in &cases {
        for r in &case.runs {
            results.push(ResultRow {
                dataset: case.dataset.clone(),
                constraint: case.constraint_index,
                method: r.label.clone(),
                failures: r.failures,
                violation_median: r.violation.median,
                violation_q25: r.violation.q25,
                violation_q75: r.violation.q75,
                violation_max: r.violation.max,
                violation_mean: r.violation.mean,
                final_cross_edge: r.final_cross_edge(),
                sinkhorn: r.sinkhorn.value,
                sinkhorn_converged: r.sinkhorn.converged,
                oracle_acceptance: case.oracle_acceptance,
                dps_zeta: case.dps_zeta,
            });
            push_curves(case, r, &mut edges, &mut hist);
            timings.push(TimingRow {
                dataset: case.dataset.clone(),
                constraint: case.constraint_index,
                method: r.label.clone(),
                elapsed_secs: r.elapsed_secs,
            });
        }
    }
    w.csv("results.csv", &results)?;
    w.csv("cross_edge.csv", &edges)?;
    w.csv("violation_hist.csv", &hist)?;
    w.csv("timings.csv", &timings)?;
    w.json(
        "results.json",
        &Data2dResults {
            final_train_loss: losses,
            cases: &cases,
        },
    )
}

fn push_curves(case: &CaseResult, r: &RunScores, edges: &mut Vec<CrossEdgeRow>, hist: &mut Vec<HistRow>) {
    for s in &r.snapshots {
        edges.push(CrossEdgeRow {
            dataset: case.dataset.clone(),
            constraint: case.constraint_index,
            method: r.label.clone(),
            step: s.step,
            sigma: s.sigma,
            cross_edge: s.cross_edge,
        });
    }
    let h = &r.violation.histogram;
    for (j, &count) in h.counts.iter().enumerate() {
        hist.push(HistRow {
            dataset: case.dataset.clone(),
            constraint: case.constraint_index,
            method: r.label.clone(),
            log10_lo: h.edges[j],
            log10_hi: h.edges[j + 1],
            count,
        });
    }
}

#[derive(Serialize)]
struct AblationRow {
    dataset: String,
    constraint: usize,
    axis: AblationAxis,
    value: usize,
    failures: usize,
    violation_median: f64,
    final_cross_edge: Option<f64>,
    cross_edge_distance: Option<f64>,
    sinkhorn: f64,
    oracle_hash: String,
}

pub fn ablate(cfg: &Data2dConfig, cache: &mut Cache, w: &mut Written, axis: AblationAxis, values: &[usize]) -> Result<()> {
    validate_ablation(axis, values)?;
    let mut rows = Vec::new();
    for i in 0..cfg.datasets.len() {
        let p = prior(cfg, cache, i)?;
        let pool = pool(cfg, cache, &p, i)?;
        for (k, c) in data2d_constraints(cfg, i)?.iter().enumerate() {
            let o = oracle(cfg, cache, &pool, k, c)?;
            let oracle_hash = content_hash(&o.cloud);
            let key = content_hash(&json!({
                "stage": "ablate",
                "net": p.key,
                "config": sampling_view(cfg),
                "dataset": i,
                "constraint": k,
                "axis": axis,
                "values": values,
            }));
            let file = cache.get_or_compute("ablate", &key, || {
                eprintln!("[data2d] {axis} sweep on {} constraint {k}", cfg.datasets[i].name());
                let runs = sample_ablation_case(cfg, &p.net, i, k, c, axis, values)?;
                Ok(bundle("ablation-runs", json!({}), runs.iter().map(|(_, r)| r.to_array_file()).collect()))
            })?;
            let (_, parts) = unbundle(&file, "ablation-runs")?;
            let runs: Vec<(usize, SampleRun)> = values
                .iter()
                .zip(&parts)
                .map(|(&v, part)| Ok((v, SampleRun::from_array_file(part)?)))
                .collect::<Result<_>>()?;
            for (v, s) in score_ablation_case(cfg, i, k, c, &o, axis, &runs)? {
                let edge = s.final_cross_edge();
                rows.push(AblationRow {
                    dataset: stem(cfg, i),
                    constraint: k,
                    axis,
                    value: v,
                    failures: s.failures,
                    violation_median: s.violation.median,
                    final_cross_edge: edge,
                    cross_edge_distance: edge.map(|e| (e - 0.5).abs()),
                    sinkhorn: s.sinkhorn.value,
                    oracle_hash: oracle_hash.clone(),
                });
            }
        }
    }
    w.csv("ablation.csv", &rows)
}
