//! Binary array container shared by checkpoints, datasets and sample runs.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes  "PPRARRAY"
//! version    u32      = 1
//! meta_len   u64      followed by meta_len bytes of UTF-8 JSON
//! n_arrays   u32
//! per array: name_len u32, name bytes, ndim u32, dims u64 × ndim,
//!            prod(dims) × f64
//! ```
//!
//! Trailing bytes after the last array are rejected.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde_json::Value;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PPRARRAY";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedArray {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Format(format!(
                "array dims {:?} hold {n} values, got {}",
                dims,
                data.len()
            )));
        }
        Ok(Self {
            name: name.into(),
            dims,
            data,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayFile {
    pub meta: Value,
    pub arrays: Vec<NamedArray>,
}

impl ArrayFile {
    pub fn new(meta: Value) -> Self {
        Self {
            meta,
            arrays: Vec::new(),
        }
    }

    pub fn with_array(mut self, a: NamedArray) -> Self {
        self.arrays.push(a);
        self
    }

    pub fn get(&self, name: &str) -> Result<&NamedArray> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Format(format!("missing array '{name}'")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&self.meta).expect("json value serializes");
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for a in &self.arrays {
            out.extend_from_slice(&(a.name.len() as u32).to_le_bytes());
            out.extend_from_slice(a.name.as_bytes());
            out.extend_from_slice(&(a.dims.len() as u32).to_le_bytes());
            for &d in &a.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &a.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let meta_len = r.u64()? as usize;
        let meta: Value = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| Error::Format(format!("bad metadata: {e}")))?;
        let n = r.u32()? as usize;
        let mut arrays = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Format("array name is not UTF-8".into()))?
                .to_owned();
            let ndim = r.u32()? as usize;
            let mut dims = Vec::with_capacity(ndim.min(16));
            for _ in 0..ndim {
                dims.push(r.u64()? as usize);
            }
            let count = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Format("array size overflow".into()))?;
            let raw = r.take(count.checked_mul(8).ok_or_else(|| Error::Format("array size overflow".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            arrays.push(NamedArray { name, dims, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { meta, arrays })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        let tmp = path.with_extension("partial");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl NamedArray {
    /// `n × dim` array of a cloud.
    pub fn from_cloud(name: impl Into<String>, cloud: &PointCloud) -> Self {
        Self {
            name: name.into(),
            dims: vec![cloud.len(), cloud.dim()],
            data: cloud.as_slice().to_vec(),
        }
    }

    pub fn to_cloud(&self) -> Result<PointCloud> {
        match self.dims[..] {
            [_, dim] => PointCloud::new(dim, self.data.clone()),
            _ => Err(Error::Format(format!("array '{}' is not two-dimensional", self.name))),
        }
    }
}

impl ArrayFile {
    pub fn kind(&self) -> Option<&str> {
        self.meta.get("kind").and_then(|k| k.as_str())
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        match self.kind() {
            Some(k) if k == kind => Ok(()),
            other => Err(Error::Format(format!("expected a '{kind}' file, found {other:?}"))),
        }
    }

    pub fn cloud(&self, name: &str) -> Result<PointCloud> {
        self.get(name)?.to_cloud()
    }
}
