//! Binary checkpoint format.
//!
//! ```text
//! "MFMB" | version: u32 | config length: u32 | config (key = value text)
//! | entry count: u32 | entries...
//! entry = name length: u32 | name (UTF-8) | dims: 4 × u32 | data: f32 × numel
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::config::ModelConfig;
use super::model::Model;

pub const MAGIC: &[u8; 4] = b"MFMB";
pub const VERSION: u32 = 1;

fn fail(path: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

/// Serialises the model to bytes.
pub fn encode(model: &Model) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + model.num_params() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = model.cfg.to_kv();
    put_u32(&mut out, cfg.len());
    out.extend_from_slice(cfg.as_bytes());
    put_u32(&mut out, model.params.len());
    for (_, name, t) in model.params.iter() {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        for d in t.shape().dims() {
            put_u32(&mut out, d);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(fail(self.path, "truncated file"));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| fail(self.path, "invalid UTF-8"))
    }
}

/// Rebuilds a model from bytes, checking magic, version and every tensor shape.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Model> {
    let mut r = Reader { buf: bytes, path };
    if r.take(4)? != MAGIC {
        return Err(fail(path, "bad magic (not an MFMB checkpoint)"));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(fail(path, format!("unsupported version {version} (expected {VERSION})")));
    }
    let cfg = ModelConfig::from_kv(&r.string()?).map_err(|e| fail(path, format!("config: {e}")))?;
    let mut model = Model::build(&cfg)?;
    let count = r.u32()?;
    if count != model.params.len() {
        return Err(fail(
            path,
            format!("{count} tensors stored, configuration defines {}", model.params.len()),
        ));
    }
    for _ in 0..count {
        let name = r.string()?;
        let dims = [r.u32()?, r.u32()?, r.u32()?, r.u32()?];
        let id = model
            .params
            .find(&name)
            .ok_or_else(|| fail(path, format!("unknown tensor {name:?}")))?;
        let expected = model.params.get(id).shape();
        if expected.dims() != dims {
            return Err(fail(
                path,
                format!("tensor {name:?} has shape {dims:?}, configuration expects {expected}"),
            ));
        }
        let raw = r.take(expected.numel() * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        *model.params.get_mut(id) = Tensor::from_vec(expected, data)?;
    }
    if !r.buf.is_empty() {
        return Err(fail(path, "trailing bytes after last tensor"));
    }
    Ok(model)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|e| fail(path, e.to_string()))?
        .read_to_end(&mut bytes)?;
    decode(&bytes, path)
}
