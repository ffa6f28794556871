//! `ppr` command-line runner.
//!
//! Every stage takes `--config`, `--seed` and `--out`. Upstream stages are
//! pulled from the cache (directory from `PPR_CACHE_DIR`) and computed when
//! missing, so `ppr score` alone runs the whole pipeline and a second run
//! with the same config only reads cached files.

pub mod cache;
pub mod config;
mod data2d;
mod ks;
pub mod output;

use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use ppr_core::study::AblationAxis;

use crate::cache::Cache;
use crate::config::{canonical_json, content_hash, ExperimentConfig, ExperimentKind};
use crate::output::{Manifest, StageFailure, StageRecord, Written};

#[derive(Debug, Parser)]
#[command(name = "ppr", version, about = "Constrained diffusion sampling experiments")]
pub struct Cli {
    /// Where trained nets, oracles and sample runs are kept between runs.
    #[arg(long, env = "PPR_CACHE_DIR", default_value = ".ppr-cache", global = true)]
    pub cache_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON experiment config; defaults of `--experiment` when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "data2d")]
    pub experiment: ExperimentKind,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train (or load) the denoisers.
    Train(Common),
    /// Build the reference samples: rejection oracles or KS test trajectories.
    Oracle(Common),
    /// Run every configured sampler.
    Sample(Common),
    /// Score samples against the references.
    Score(Common),
    /// All stages in order.
    Run(Common),
    /// PPR sweep over one ablation axis (two-dimensional study only).
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        axis: AblationAxis,
        /// Comma-separated values, e.g. `0,1,2`.
        #[arg(long, value_delimiter = ',')]
        values: Vec<usize>,
    },
    /// Print a default config.
    Defaults {
        #[arg(value_enum)]
        experiment: ExperimentKind,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Train,
    Oracle,
    Sample,
    Score,
    Ablate,
}

impl Stage {
    fn name(self) -> &'static str {
        match self {
            Stage::Train => "train",
            Stage::Oracle => "oracle",
            Stage::Sample => "sample",
            Stage::Score => "score",
            Stage::Ablate => "ablate",
        }
    }
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default_for(common.experiment),
    };
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<()> {
    let (common, stages, ablation) = match cli.command {
        Command::Defaults { experiment } => {
            let text = serde_json::to_string_pretty(&ExperimentConfig::default_for(experiment))?;
            // a closed pipe (e.g. `| head`) is not an error
            let _ = writeln!(std::io::stdout(), "{text}");
            return Ok(());
        }
        Command::Train(c) => (c, vec![Stage::Train], None),
        Command::Oracle(c) => (c, vec![Stage::Oracle], None),
        Command::Sample(c) => (c, vec![Stage::Sample], None),
        Command::Score(c) => (c, vec![Stage::Score], None),
        Command::Run(c) => (c, vec![Stage::Train, Stage::Oracle, Stage::Sample, Stage::Score], None),
        Command::Ablate { common, axis, values } => {
            ppr_core::study::validate_ablation(axis, &values)?;
            (common, vec![Stage::Ablate], Some((axis, values)))
        }
    };
    let cfg = load(&common)?;
    if ablation.is_some() && !matches!(cfg, ExperimentConfig::Data2d(_)) {
        bail!("ablations are defined for the data2d experiment");
    }
    let mut cache = Cache::new(cli.cache_dir);
    let out = common.out;
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("config.json"), canonical_json(&cfg) + "\n")?;
    let mut manifest = Manifest {
        experiment: cfg.name().into(),
        config_hash: content_hash(&cfg),
        completed: Vec::new(),
        failed: None,
        cache_hits: 0,
        cache_misses: 0,
    };
    for stage in stages {
        let mut w = Written::new(&out);
        let result = match (&cfg, stage) {
            (ExperimentConfig::Data2d(c), Stage::Train) => data2d::train(c, &mut cache, &mut w),
            (ExperimentConfig::Data2d(c), Stage::Oracle) => data2d::oracles(c, &mut cache, &mut w),
            (ExperimentConfig::Data2d(c), Stage::Sample) => data2d::sample(c, &mut cache, &mut w),
            (ExperimentConfig::Data2d(c), Stage::Score) => data2d::score(c, &mut cache, &mut w),
            (ExperimentConfig::Data2d(c), Stage::Ablate) => {
                let (axis, values) = ablation.as_ref().expect("ablation arguments");
                data2d::ablate(c, &mut cache, &mut w, *axis, values)
            }
            (ExperimentConfig::Ks(c), Stage::Train) => ks::train(c, &mut cache, &mut w),
            (ExperimentConfig::Ks(c), Stage::Oracle) => ks::oracles(c, &mut cache, &mut w),
            (ExperimentConfig::Ks(c), Stage::Sample) => ks::sample(c, &mut cache, &mut w),
            (ExperimentConfig::Ks(c), Stage::Score) => ks::score(c, &mut cache, &mut w),
            (ExperimentConfig::Ks(_), Stage::Ablate) => unreachable!("rejected above"),
        };
        manifest.cache_hits = cache.hits();
        manifest.cache_misses = cache.misses();
        match result {
            Ok(()) => {
                manifest.completed.push(StageRecord {
                    stage: stage.name().into(),
                    files: w.files,
                });
                manifest.write(&out)?;
            }
            Err(e) => {
                manifest.failed = Some(StageFailure {
                    stage: stage.name().into(),
                    error: format!("{e:#}"),
                });
                manifest.write(&out)?;
                return Err(e.context(format!("stage '{}' failed", stage.name())));
            }
        }
    }
    Ok(())
}
