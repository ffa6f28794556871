//! Content-addressed store for trained nets, oracles and sample runs.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ppr_core::io::{ArrayFile, NamedArray};
use serde_json::{json, Value};

pub struct Cache {
    dir: PathBuf,
    hits: usize,
    misses: usize,
}

impl Cache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            hits: 0,
            misses: 0,
        }
    }

    pub fn path(&self, kind: &str, key: &str) -> PathBuf {
        self.dir.join(kind).join(format!("{key}.ppr"))
    }

    /// Returns the stored file for `(kind, key)`, computing and storing it
    /// first when absent or unreadable.
    pub fn get_or_compute(&mut self, kind: &str, key: &str, compute: impl FnOnce() -> Result<ArrayFile>) -> Result<ArrayFile> {
        let path = self.path(kind, key);
        if path.exists() {
            match ArrayFile::read(&path) {
                Ok(f) => {
                    self.hits += 1;
                    return Ok(f);
                }
                Err(e) => eprintln!("cache: discarding unreadable {} ({e})", path.display()),
            }
        }
        self.misses += 1;
        let file = compute()?;
        write_atomic(&path, &file)?;
        Ok(file)
    }

    pub fn hits(&self) -> usize {
        self.hits
    }

    pub fn misses(&self) -> usize {
        self.misses
    }
}

pub fn write_atomic(path: &Path, file: &ArrayFile) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let tmp = path.with_extension("partial");
    file.write(&tmp).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("moving {} into place", path.display()))?;
    Ok(())
}

/// Packs several files into one; array names get a `j/` prefix and the
/// metadata of part `j` lands at `meta.parts[j]`.
pub fn bundle(kind: &str, extra: Value, parts: Vec<ArrayFile>) -> ArrayFile {
    let metas: Vec<Value> = parts.iter().map(|p| p.meta.clone()).collect();
    let mut out = ArrayFile::new(json!({ "kind": kind, "extra": extra, "parts": metas }));
    for (j, p) in parts.into_iter().enumerate() {
        for a in p.arrays {
            out = out.with_array(NamedArray {
                name: format!("{j}/{}", a.name),
                ..a
            });
        }
    }
    out
}

/// Inverse of [`bundle`]: the extra metadata and the parts in order.
pub fn unbundle(file: &ArrayFile, kind: &str) -> Result<(Value, Vec<ArrayFile>)> {
    file.expect_kind(kind)?;
    let metas = file.meta["parts"].as_array().context("bundle without parts")?;
    let mut parts: Vec<ArrayFile> = metas.iter().map(|m| ArrayFile::new(m.clone())).collect();
    for a in &file.arrays {
        let (j, name) = a.name.split_once('/').context("bundle array without a part prefix")?;
        let j: usize = j.parse().context("bad part index")?;
        let part = parts.get_mut(j).context("part index out of range")?;
        part.arrays.push(NamedArray {
            name: name.to_string(),
            ..a.clone()
        });
    }
    Ok((file.meta["extra"].clone(), parts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn part(tag: f64) -> ArrayFile {
        ArrayFile::new(json!({ "kind": "p", "tag": tag }))
            .with_array(NamedArray::new("a", vec![2], vec![tag, tag + 1.0]).unwrap())
            .with_array(NamedArray::new("b/c", vec![1], vec![-tag]).unwrap())
    }

    #[test]
    fn bundle_round_trip() {
        let parts = vec![part(1.0), part(5.0), ArrayFile::new(json!({ "kind": "empty" }))];
        let b = bundle("set", json!({ "zeta": 0.1 }), parts.clone());
        let (extra, back) = unbundle(&b, "set").unwrap();
        assert_eq!(extra, json!({ "zeta": 0.1 }));
        assert_eq!(back, parts);
        assert!(unbundle(&b, "other").is_err());
    }

    #[test]
    fn computes_once() {
        let dir = tempfile::tempdir().unwrap();
        let mut cache = Cache::new(dir.path());
        let mut calls = 0;
        for _ in 0..3 {
            let f = cache
                .get_or_compute("k", "abc", || {
                    calls += 1;
                    Ok(part(2.0))
                })
                .unwrap();
            assert_eq!(f, part(2.0));
        }
        assert_eq!(calls, 1);
        assert_eq!((cache.hits(), cache.misses()), (2, 1));
        fs::write(cache.path("k", "abc"), b"junk").unwrap();
        cache.get_or_compute("k", "abc", || Ok(part(3.0))).unwrap();
        assert_eq!(ArrayFile::read(cache.path("k", "abc")).unwrap(), part(3.0));
    }
}
