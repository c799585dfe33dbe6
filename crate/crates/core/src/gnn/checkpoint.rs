//! Binary model checkpoints.
//!
//! All integers are little-endian `u32`.
//!
//! ```text
//! magic       8 bytes   "PSEGMDL\0"
//! version     u32       1
//! config_len  u32
//! config      config_len bytes of UTF-8 JSON (the model configuration)
//! count       u32       number of parameter tensors
//! table       count × { name_len u32, name bytes, ndim u32, ndim × dim u32 }
//! payload     every tensor's values as f32 LE, in table order
//! ```
//!
//! The file must end exactly after the payload.

use std::path::Path;

use super::model::{ModelConfig, SegModel};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PSEGMDL\0";
pub const VERSION: u32 = 1;

pub fn to_bytes(model: &SegModel<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put(&mut out, VERSION);
    let config = serde_json::to_vec(model.config()).expect("config serializes");
    put(&mut out, config.len() as u32);
    out.extend_from_slice(&config);
    put(&mut out, model.params().len() as u32);
    for (name, t) in model.names().iter().zip(model.params()) {
        put(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        put(&mut out, t.shape().len() as u32);
        for &d in t.shape() {
            put(&mut out, d as u32);
        }
    }
    for t in model.params() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<SegModel<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(bad("not a model checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let config_len = r.u32()? as usize;
    let config: ModelConfig =
        serde_json::from_slice(r.take(config_len)?).map_err(|e| bad(&format!("config: {e}")))?;
    let count = r.u32()? as usize;
    let mut table = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| bad("tensor name is not UTF-8"))?
            .to_string();
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        table.push((name, shape));
    }
    let mut params = Vec::with_capacity(table.len());
    for (name, shape) in table {
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| bad("tensor too large"))?;
        let raw = r.take(len.checked_mul(4).ok_or_else(|| bad("tensor too large"))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let t = Tensor::new(shape, data).map_err(|e| bad(&format!("{name}: {e}")))?;
        params.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(bad(&format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    SegModel::from_parts(config, params).map_err(|e| bad(&e.to_string()))
}

pub fn save_checkpoint(path: &Path, model: &SegModel<f32>) -> Result<()> {
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<SegModel<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

fn put(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn bad(msg: &str) -> Error {
    Error::Checkpoint(msg.to_string())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| bad("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
