//! CSV/JSON writers and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

/// Files written by a stage, relative to the output directory.
#[derive(Debug, Default)]
pub struct Written {
    root: PathBuf,
    pub files: Vec<String>,
}

impl Written {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        }
    }

    pub fn path(&self, rel: &str) -> Result<PathBuf> {
        let p = self.root.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        Ok(p)
    }

    pub fn csv<T: Serialize>(&mut self, rel: &str, rows: &[T]) -> Result<()> {
        let path = self.path(rel)?;
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        self.files.push(rel.to_string());
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let path = self.path(rel)?;
        let text = serde_json::to_string_pretty(value)?;
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        self.files.push(rel.to_string());
        Ok(())
    }

    pub fn array(&mut self, rel: &str, file: &ppr_core::io::ArrayFile) -> Result<()> {
        let path = self.path(rel)?;
        crate::cache::write_atomic(&path, file)?;
        self.files.push(rel.to_string());
        Ok(())
    }
}

#[derive(Debug, Serialize)]
pub struct StageRecord {
    pub stage: String,
    pub files: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct StageFailure {
    pub stage: String,
    pub error: String,
}

/// `manifest.json`: what has been completed so far. Rewritten after every
/// stage, so an interrupted run still says which artifacts are complete.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub experiment: String,
    pub config_hash: String,
    pub completed: Vec<StageRecord>,
    pub failed: Option<StageFailure>,
    pub cache_hits: usize,
    pub cache_misses: usize,
}

impl Manifest {
    pub fn write(&self, out: &Path) -> Result<()> {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let text = serde_json::to_string_pretty(self)?;
        fs::write(out.join("manifest.json"), text + "\n").context("writing manifest")
    }
}
