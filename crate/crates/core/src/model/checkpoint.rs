//! Binary checkpoint layout (all integers little-endian):
//!
//! ```text
//! "NIAL"                      magic
//! u32                         format version (1)
//! u32 + bytes                 model config as canonical key=value text
//! u32                         tensor count
//! per tensor:
//!   u32 + bytes               name (UTF-8)
//!   u8                        rank
//!   u32 × rank                dims
//!   f64 × product(dims)       row-major values
//! ```

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, NialModel, Parameter};
use crate::error::{NialError, Result};
use crate::kv::KvMap;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NIAL";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(model: &NialModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let cfg = model.config().to_kv().render();
    put_bytes(&mut out, cfg.as_bytes());
    out.extend_from_slice(&(model.parameters().len() as u32).to_le_bytes());
    for p in model.parameters() {
        put_bytes(&mut out, p.name.as_bytes());
        out.push(p.value.rank() as u8);
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn put_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(bytes);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(NialError::CheckpointFormat(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    fn string(&mut self, what: &str) -> Result<&'a str> {
        let n = self.u32(what)? as usize;
        std::str::from_utf8(self.take(n, what)?)
            .map_err(|_| NialError::CheckpointFormat(format!("{what} is not UTF-8")))
    }
}

/// Decodes a checkpoint. Either the whole model is returned or an error;
/// parameters are matched by name against the architecture in the header.
pub fn read_checkpoint(bytes: &[u8]) -> Result<NialModel> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(NialError::CheckpointFormat("bad magic bytes".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(NialError::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let cfg_text = r.string("config")?;
    let config = KvMap::parse(cfg_text)
        .and_then(|m| ModelConfig::from_kv(&m))
        .map_err(|e| NialError::CheckpointFormat(format!("config header: {e}")))?;
    let skeleton = NialModel::build(config.clone(), 0)
        .map_err(|e| NialError::CheckpointFormat(format!("config header: {e}")))?;

    let count = r.u32("tensor count")? as usize;
    let mut stored: Vec<(String, Tensor)> = Vec::with_capacity(count.min(4096));
    for i in 0..count {
        let name = r.string(&format!("tensor {i} name"))?.to_string();
        let rank = r.u8(&format!("{name} rank"))? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32(&format!("{name} dims"))? as usize);
        }
        let n: usize = shape.iter().product();
        if n.saturating_mul(8) > bytes.len() {
            return Err(NialError::CheckpointFormat(format!(
                "{name}: shape {shape:?} exceeds file size"
            )));
        }
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(r.f64(&format!("{name} values"))?);
        }
        let t = Tensor::from_vec(shape, data)
            .map_err(|e| NialError::CheckpointFormat(format!("{name}: {e}")))?;
        if stored.iter().any(|(n, _)| *n == name) {
            return Err(NialError::CheckpointFormat(format!(
                "duplicate parameter {name}"
            )));
        }
        stored.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(NialError::CheckpointFormat(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }

    let mut params = Vec::with_capacity(skeleton.parameters().len());
    for expected in skeleton.parameters() {
        let pos = stored
            .iter()
            .position(|(n, _)| *n == expected.name)
            .ok_or_else(|| {
                NialError::CheckpointFormat(format!("missing parameter {}", expected.name))
            })?;
        let (name, value) = stored.swap_remove(pos);
        if value.shape() != expected.value.shape() {
            return Err(NialError::CheckpointFormat(format!(
                "parameter {name}: shape {:?}, architecture expects {:?}",
                value.shape(),
                expected.value.shape()
            )));
        }
        params.push(Parameter { name, value });
    }
    if let Some((name, _)) = stored.first() {
        return Err(NialError::CheckpointFormat(format!(
            "unexpected parameter {name}"
        )));
    }
    Ok(NialModel::from_parts(
        config,
        params,
        ChaCha8Rng::seed_from_u64(0),
    ))
}

pub fn save(model: &NialModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_checkpoint(model)).map_err(|e| NialError::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<NialModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| NialError::io(path, e))?;
    read_checkpoint(&bytes)
}
