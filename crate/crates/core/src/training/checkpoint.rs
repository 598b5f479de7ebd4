//! Binary checkpoint container.
//!
//! Layout (little endian): 8-byte magic, `u32` version, `u64` length of the
//! model spec JSON followed by its bytes, `u64` optimizer steps, `u32` tensor
//! count, then per tensor: `u32` name length, name bytes, `u32` rank, `u64`
//! per dimension and the `f64` values.

use std::fs;
use std::path::Path;

use glioseg_nn::{ParamStore, Tensor};

use crate::error::{CheckpointError, Error, Result};
use crate::models::{Arch, Model, ModelSpec};

pub const MAGIC: &[u8; 8] = b"GBMCKPT\0";
pub const VERSION: u32 = 1;

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let spec = serde_json::to_vec(&model.spec).expect("spec serializes");
    let mut out = Vec::with_capacity(64 + spec.len() + model.parameter_count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(spec.len() as u64).to_le_bytes());
    out.extend_from_slice(&spec);
    out.extend_from_slice(&model.steps_trained.to_le_bytes());
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (name, t) in model.params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> std::result::Result<&'a [u8], CheckpointError> {
        if self.buf.len() < n {
            return Err(CheckpointError::Truncated(what));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u32(&mut self, what: &'static str) -> std::result::Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &'static str) -> std::result::Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, what: &'static str) -> std::result::Result<usize, CheckpointError> {
        let n = self.u64(what)?;
        usize::try_from(n)
            .ok()
            .filter(|&n| n <= self.buf.len())
            .ok_or(CheckpointError::Truncated(what))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { buf: bytes };
    if r.take(MAGIC.len(), "magic").map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic.into());
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: VERSION,
        }
        .into());
    }
    let spec_len = r.len("spec length")?;
    let spec: ModelSpec = serde_json::from_slice(r.take(spec_len, "spec")?)
        .map_err(|e| CheckpointError::Corrupt(format!("model spec: {e}")))?;
    spec.validate()
        .map_err(|e| CheckpointError::Corrupt(format!("model spec: {e}")))?;
    let steps = r.u64("step count")?;
    let count = r.u32("tensor count")?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32("tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| CheckpointError::Corrupt("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u64("tensor shape")? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= r.buf.len()))
            .ok_or(CheckpointError::Truncated("tensor data"))?;
        let raw = r.take(numel * 8, "tensor data")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if params.id(&name).is_ok() {
            return Err(CheckpointError::Corrupt(format!("duplicate tensor `{name}`")).into());
        }
        let t = Tensor::from_vec(&shape, data).expect("length checked");
        params.insert(name, t);
    }
    if !r.buf.is_empty() {
        return Err(CheckpointError::Corrupt(format!("{} trailing bytes", r.buf.len())).into());
    }
    Model::from_parts(spec, params, steps)
}

/// Writes through a temporary sibling file so an interrupted save never
/// replaces a good checkpoint with a partial one.
pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("ckpt.partial");
    fs::write(&tmp, to_bytes(model)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Loads a checkpoint and requires it to hold the given architecture.
pub fn load_checkpoint_as(path: &Path, arch: Arch) -> Result<Model> {
    let model = load_checkpoint(path)?;
    if model.spec.arch != arch {
        return Err(CheckpointError::SpecMismatch(format!(
            "checkpoint holds {:?}, {arch:?} was requested",
            model.spec.arch
        ))
        .into());
    }
    Ok(model)
}
