//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "CASCKPT\0"
//! version    u32      (1)
//! iteration  u64
//! count      u32
//! count × entry:
//!     name_len u32, name (UTF-8), ndim u32, dims u64 × ndim, data f64 × prod(dims)
//! ```
//!
//! Entries are named `param/<path>` for parameters and `momentum/<path>`
//! for optimizer buffers, in parameter traversal order. The domain
//! classifier's path embeds its alignment mode.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::domain::AlignmentMode;
use super::params::ModelParams;
use super::tensor::Tensor;
use super::Parameters;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"CASCKPT\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iteration: u64,
    pub params: ModelParams,
    pub momentum: ModelParams,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut entries = Vec::new();
        for (prefix, p) in [("param/", &self.params), ("momentum/", &self.momentum)] {
            p.visit(prefix, &mut |name, t| entries.push((name, t)));
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.iteration.to_le_bytes());
        out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
        for (name, t) in entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(r.fail("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.fail(&format!("unsupported version {version}")));
        }
        let iteration = r.u64()?;
        let count = r.u32()? as usize;
        let mut entries: BTreeMap<String, Tensor> = BTreeMap::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| r.fail("non-UTF-8 name"))?;
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(8).ok_or_else(|| r.fail("size overflow"))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if entries.insert(name.clone(), Tensor { shape, data }).is_some() {
                return Err(r.fail(&format!("duplicate entry {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(r.fail("trailing bytes"));
        }

        let mode = entries
            .keys()
            .find_map(|k| k.strip_prefix("param/delta/"))
            .map(|rest| {
                let m = rest.split('/').next().unwrap_or("");
                AlignmentMode::from_name(m).ok_or_else(|| r.fail(&format!("unknown alignment mode {m}")))
            })
            .transpose()?
            .unwrap_or(AlignmentMode::None);

        let mut params = ModelParams::zeros(mode);
        let mut momentum = ModelParams::zeros(mode);
        let mut error = None;
        for (prefix, p) in [("param/", &mut params), ("momentum/", &mut momentum)] {
            p.visit_mut(prefix, &mut |name, t| match entries.remove(&name) {
                Some(src) if src.shape == t.shape => *t = src,
                Some(src) => {
                    error.get_or_insert(format!("{name}: shape {:?}, expected {:?}", src.shape, t.shape));
                }
                None => {
                    error.get_or_insert(format!("missing entry {name}"));
                }
            });
        }
        if let Some(e) = error {
            return Err(r.fail(&e));
        }
        if let Some(extra) = entries.keys().next() {
            return Err(r.fail(&format!("unexpected entry {extra}")));
        }
        Ok(Self {
            iteration,
            params,
            momentum,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, msg: &str) -> Error {
        Error::InvalidInput(format!("checkpoint: {msg} (offset {})", self.pos))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| self.fail("truncated"))?;
        let s = &self.bytes[self.pos..end];
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

/// Writes through a temporary sibling and renames into place.
pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, checkpoint.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
