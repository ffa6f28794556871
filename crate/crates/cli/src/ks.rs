//! Stages of the Kuramoto-Sivashinsky study.

use anyhow::{Context, Result};
use ppr_core::io::{ArrayFile, NamedArray};
use ppr_core::samplers::SampleRun;
use ppr_core::study::{ks_truths, sample_ks, score_ks, tail_loss, train_ks_net, KsRuns, KsStudy};
use ppr_core::{DenoiserNet, KsConfig, Method, PointCloud};
use serde::Serialize;
use serde_json::json;

use crate::cache::{bundle, unbundle, Cache};
use crate::config::content_hash;
use crate::output::Written;

struct Prior {
    net: DenoiserNet,
    loss: Vec<f64>,
    data_std: f64,
    key: String,
}

fn prior(cfg: &KsConfig, cache: &mut Cache) -> Result<Prior> {
    let key = content_hash(&json!({
        "stage": "ks-net",
        "solver": cfg.solver,
        "train_trajectories": cfg.train_trajectories,
        "window": cfg.window,
        "resolution": cfg.resolution,
        "augment": cfg.augment,
        "net": cfg.net,
        "seed": cfg.seed,
    }));
    let file = cache.get_or_compute("net", &key, || {
        eprintln!("[ks] simulating {} trajectories and training", cfg.train_trajectories);
        let (net, report, std) = train_ks_net(cfg)?;
        let n = report.loss_history.len();
        Ok(net
            .to_array_file()
            .with_array(NamedArray::new("loss_history", vec![n], report.loss_history)?)
            .with_array(NamedArray::new("data_std", vec![1], vec![std])?))
    })?;
    Ok(Prior {
        net: DenoiserNet::from_array_file(&file)?,
        loss: file.get("loss_history")?.data.clone(),
        data_std: file.get("data_std")?.data[0],
        key,
    })
}

fn truths(cfg: &KsConfig, cache: &mut Cache, p: &Prior) -> Result<(PointCloud, String)> {
    let key = content_hash(&json!({
        "stage": "ks-truths",
        "net": p.key,
        "sampler": cfg.sampler,
        "test_cases": cfg.test_cases,
        "seed": cfg.seed,
    }));
    let file = cache.get_or_compute("oracle", &key, || {
        eprintln!("[ks] drawing {} test trajectories", cfg.test_cases);
        let cloud = ks_truths(cfg, &p.net)?;
        Ok(ArrayFile::new(json!({ "kind": "cloud" })).with_array(NamedArray::from_cloud("cloud", &cloud)))
    })?;
    Ok((file.cloud("cloud")?, key))
}

fn runs(cfg: &KsConfig, cache: &mut Cache, p: &Prior, truths: &(PointCloud, String)) -> Result<KsRuns> {
    let key = content_hash(&json!({ "stage": "ks-sample", "net": p.key, "truths": truths.1, "config": cfg }));
    let file = cache.get_or_compute("sample", &key, || {
        eprintln!("[ks] sampling {} ensembles per method", cfg.test_cases);
        let runs = sample_ks(cfg, &p.net, &truths.0)?;
        let methods: Vec<Method> = runs.runs.iter().map(|(m, _)| *m).collect();
        let parts = runs.runs.iter().flat_map(|(_, per_case)| per_case.iter().map(SampleRun::to_array_file)).collect();
        Ok(bundle("ks-runs", json!({ "dps_zeta": runs.dps_zeta, "methods": methods, "cases": truths.0.len() }), parts))
    })?;
    let (extra, parts) = unbundle(&file, "ks-runs")?;
    let methods: Vec<Method> = serde_json::from_value(extra["methods"].clone()).context("bad method list in cache")?;
    let cases = extra["cases"].as_u64().context("bad case count in cache")? as usize;
    if parts.len() != methods.len() * cases {
        anyhow::bail!("cached KS runs are incomplete");
    }
    let mut decoded = Vec::with_capacity(methods.len());
    for (j, m) in methods.into_iter().enumerate() {
        let per_case = parts[j * cases..(j + 1) * cases]
            .iter()
            .map(|f| Ok(SampleRun::from_array_file(f)?))
            .collect::<Result<_>>()?;
        decoded.push((m, per_case));
    }
    Ok(KsRuns {
        dps_zeta: extra["dps_zeta"].as_f64(),
        runs: decoded,
    })
}

#[derive(Serialize)]
struct LossRow {
    step: usize,
    loss: f64,
}

pub fn train(cfg: &KsConfig, cache: &mut Cache, w: &mut Written) -> Result<()> {
    let p = prior(cfg, cache)?;
    w.array("nets/ks.ppr", &p.net.to_array_file())?;
    let rows: Vec<LossRow> = p.loss.iter().enumerate().map(|(step, &loss)| LossRow { step, loss }).collect();
    w.csv("train_loss.csv", &rows)?;
    w.json("ks_data.json", &json!({ "data_std": p.data_std, "dim": cfg.dim(), "resolution": cfg.resolution }))
}

pub fn oracles(cfg: &KsConfig, cache: &mut Cache, w: &mut Written) -> Result<()> {
    let p = prior(cfg, cache)?;
    let (t, _) = truths(cfg, cache, &p)?;
    w.array(
        "truths.ppr",
        &ArrayFile::new(json!({ "kind": "cloud", "resolution": cfg.resolution })).with_array(NamedArray::from_cloud("cloud", &t)),
    )
}

#[derive(Serialize)]
struct SampleRow {
    method: Method,
    case: usize,
    members: usize,
    failures: usize,
}

pub fn sample(cfg: &KsConfig, cache: &mut Cache, w: &mut Written) -> Result<()> {
    let p = prior(cfg, cache)?;
    let t = truths(cfg, cache, &p)?;
    let r = runs(cfg, cache, &p, &t)?;
    let mut rows = Vec::new();
    for (m, per_case) in &r.runs {
        for (k, run) in per_case.iter().enumerate() {
            w.array(&format!("samples/{m}-case{k}.ppr"), &run.to_array_file())?;
            rows.push(SampleRow {
                method: *m,
                case: k,
                members: run.cloud.len(),
                failures: run.failures.len(),
            });
        }
    }
    w.csv("samples.csv", &rows)
}

#[derive(Serialize)]
struct ResultRow {
    method: Method,
    failures: usize,
    violation_median: f64,
    violation_max: f64,
    crps: f64,
    skill: f64,
    spread: f64,
    spread_skill_ratio: Option<f64>,
    member_rmse: f64,
    continuity_mean: f64,
    continuity_max: f64,
    elapsed_secs: f64,
}

pub fn score(cfg: &KsConfig, cache: &mut Cache, w: &mut Written) -> Result<()> {
    let p = prior(cfg, cache)?;
    let t = truths(cfg, cache, &p)?;
    let r = runs(cfg, cache, &p, &t)?;
    let methods = score_ks(cfg, &t.0, &r)?;
    let rows: Vec<ResultRow> = methods
        .iter()
        .map(|s| ResultRow {
            method: s.method,
            failures: s.failures,
            violation_median: s.violation.median,
            violation_max: s.violation.max,
            crps: s.ensemble.crps,
            skill: s.ensemble.skill,
            spread: s.ensemble.spread,
            spread_skill_ratio: s.ensemble.ratio,
            member_rmse: s.ensemble.rmse,
            continuity_mean: s.continuity_mean,
            continuity_max: s.continuity_max,
            elapsed_secs: s.elapsed_secs,
        })
        .collect();
    w.csv("results.csv", &rows)?;
    w.json(
        "results.json",
        &KsStudy {
            final_train_loss: tail_loss(&ppr_core::nn::TrainReport { loss_history: p.loss }),
            data_std: p.data_std,
            dps_zeta: r.dps_zeta,
            methods,
        },
    )
}
