//! Experiment configuration files and their content hashes.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use ppr_core::{Data2dConfig, KsConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Top-level config file; `experiment` selects the study and every other
/// key belongs to that study's config. Missing keys take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case")]
pub enum ExperimentConfig {
    Data2d(Data2dConfig),
    Ks(KsConfig),
}

impl ExperimentConfig {
    pub fn default_for(kind: ExperimentKind) -> Self {
        match kind {
            ExperimentKind::Data2d => Self::Data2d(Data2dConfig::default()),
            ExperimentKind::Ks => Self::Ks(KsConfig::default()),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).context("invalid experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Data2d(c) => c.validate()?,
            Self::Ks(c) => c.validate()?,
        }
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            Self::Data2d(c) => c.seed = seed,
            Self::Ks(c) => c.seed = seed,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Data2d(_) => "data2d",
            Self::Ks(_) => "ks",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ExperimentKind {
    Data2d,
    Ks,
}

/// Serialization with object keys in sorted order, so key order in the
/// source file never changes a hash.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("config serializes");
    serde_json::to_string(&sort_keys(v)).expect("value serializes")
}

fn sort_keys(v: Value) -> Value {
    match v {
        Value::Object(map) => {
            let mut entries: Vec<(String, Value)> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            Value::Object(entries.into_iter().map(|(k, v)| (k, sort_keys(v))).collect())
        }
        Value::Array(items) => Value::Array(items.into_iter().map(sort_keys).collect()),
        other => other,
    }
}

/// First 16 hex digits of the SHA-256 of the canonical form.
pub fn content_hash<T: Serialize>(value: &T) -> String {
    let digest = Sha256::digest(canonical_json(value).as_bytes());
    hex::encode(&digest[..8])
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn key_order_does_not_change_the_hash() {
        let a = json!({"b": 1, "a": {"y": [1, 2], "x": 0.5}});
        let b: Value = serde_json::from_str(r#"{"a": {"x": 0.5, "y": [1, 2]}, "b": 1}"#).unwrap();
        assert_eq!(content_hash(&a), content_hash(&b));
        assert_ne!(content_hash(&a), content_hash(&json!({"b": 2, "a": {"y": [1, 2], "x": 0.5}})));
        assert_eq!(content_hash(&a).len(), 16);
    }

    #[test]
    fn partial_config_takes_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"experiment": "data2d", "samples": 17}"#).unwrap();
        let ExperimentConfig::Data2d(c) = cfg else { panic!("wrong experiment") };
        assert_eq!(c.samples, 17);
        assert_eq!(c.constraints_per_dataset, Data2dConfig::default().constraints_per_dataset);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ExperimentConfig::from_json(r#"{"experiment": "data2d", "methods": ["ppr", "magic"]}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"experiment": "data2d", "sampels": 3}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"experiment": "weather"}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"experiment": "ks", "ensemble": 1}"#).is_err());
    }

    #[test]
    fn defaults_round_trip() {
        for kind in [ExperimentKind::Data2d, ExperimentKind::Ks] {
            let cfg = ExperimentConfig::default_for(kind);
            let back = ExperimentConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
            assert_eq!(back, cfg);
        }
    }
}
