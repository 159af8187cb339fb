//! Versioned binary checkpoint.
//!
//! ```text
//! magic     8 bytes  "QMDCKPT\0"
//! version   u32      1
//! dtype     u32      0 = f32, 1 = f64
//! meta_len  u32      length of the JSON metadata that follows
//! meta      bytes    {"config": .., "mode": .., "extra": ..}
//! count     u32      number of tensors
//! per tensor:
//!   name_len u32, name bytes (UTF-8), ndim u32, dims u32 * ndim,
//!   values   little-endian, product(dims) elements of dtype
//! ```
//!
//! All integers are little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{DetectorConfig, DetectorMode};
use super::model::ToyDetector;
use super::ops::Real;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"QMDCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    config: DetectorConfig,
    mode: DetectorMode,
    #[serde(default)]
    extra: serde_json::Value,
}

fn dtype_code<F: Real>() -> u32 {
    if std::mem::size_of::<F>() == 4 {
        0
    } else {
        1
    }
}

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

/// Serializes a model; `extra` is free-form metadata stored alongside.
pub fn to_bytes<F: Real>(model: &ToyDetector<F>, extra: serde_json::Value) -> Result<Vec<u8>> {
    let meta = serde_json::to_vec(&Meta {
        config: model.config.clone(),
        mode: model.mode,
        extra,
    })?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION as usize);
    put_u32(&mut buf, dtype_code::<F>() as usize);
    put_u32(&mut buf, meta.len());
    buf.extend_from_slice(&meta);
    let tensors = model.params.named_tensors();
    put_u32(&mut buf, tensors.len());
    for (name, dims, values) in tensors {
        put_u32(&mut buf, name.len());
        buf.extend_from_slice(name.as_bytes());
        put_u32(&mut buf, dims.len());
        for d in dims {
            put_u32(&mut buf, d);
        }
        for v in values {
            if dtype_code::<F>() == 0 {
                buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            } else {
                buf.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
    }
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Format {
            offset: self.pos,
            message: message.into(),
        })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return self.fail(format!("truncated: need {n} more bytes"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }
}

pub type Loaded<F> = (ToyDetector<F>, serde_json::Value);

pub fn from_bytes<F: Real>(bytes: &[u8]) -> Result<Loaded<F>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        r.pos = 0;
        return r.fail("not a detector checkpoint");
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return r.fail(format!("unsupported checkpoint version {version}"));
    }
    let dtype = r.u32()?;
    if dtype > 1 {
        return r.fail(format!("unknown dtype code {dtype}"));
    }
    let meta_len = r.u32()?;
    let meta_start = r.pos;
    let meta: Meta = serde_json::from_slice(r.take(meta_len)?).map_err(|e| Error::Format {
        offset: meta_start,
        message: format!("bad metadata: {e}"),
    })?;
    // a zero-seeded init gives the right layout; every value is overwritten
    let mut model = ToyDetector::<F>::init(meta.config, meta.mode, &mut crate::rng::seeded(0))?;
    let expected: Vec<(String, Vec<usize>)> = model
        .params
        .named_tensors()
        .into_iter()
        .map(|(n, d, _)| (n, d))
        .collect();
    let count = r.u32()?;
    if count != expected.len() {
        return r.fail(format!("expected {} tensors, found {count}", expected.len()));
    }
    let width = if dtype == 0 { 4 } else { 8 };
    let mut slots = model.params.tensors_mut();
    for ((name, dims), slot) in expected.iter().zip(slots.iter_mut()) {
        let name_len = r.u32()?;
        let got = r.take(name_len)?;
        if got != name.as_bytes() {
            return r.fail(format!(
                "expected tensor {name}, found {}",
                String::from_utf8_lossy(got)
            ));
        }
        let ndim = r.u32()?;
        let got_dims = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        if &got_dims != dims {
            return r.fail(format!("tensor {name}: shape {got_dims:?}, expected {dims:?}"));
        }
        let raw = r.take(slot.len() * width)?;
        for (v, chunk) in slot.iter_mut().zip(raw.chunks_exact(width)) {
            *v = if dtype == 0 {
                F::of(f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64)
            } else {
                F::of(f64::from_le_bytes(chunk.try_into().expect("8 bytes")))
            };
        }
    }
    if r.pos != bytes.len() {
        return r.fail("trailing bytes after last tensor");
    }
    if !model.params.is_finite() {
        return Err(Error::Validation("checkpoint contains non-finite values".into()));
    }
    Ok((model, meta.extra))
}

pub fn save<F: Real>(path: impl AsRef<Path>, model: &ToyDetector<F>, extra: serde_json::Value) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(model, extra)?).map_err(|e| Error::io(path, e))
}

pub fn load<F: Real>(path: impl AsRef<Path>) -> Result<Loaded<F>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn round_trip() {
        let cfg = DetectorConfig::new(4);
        let m = ToyDetector::<f32>::init(cfg, DetectorMode::QueryModulated, &mut seeded(3)).unwrap();
        let bytes = to_bytes(&m, serde_json::json!({"step": 12})).unwrap();
        let (back, extra) = from_bytes::<f32>(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(extra["step"], 12);
    }

    #[test]
    fn rejects_corruption() {
        let cfg = DetectorConfig::miniature(2);
        let m = ToyDetector::<f64>::init(cfg, DetectorMode::Baseline, &mut seeded(3)).unwrap();
        let bytes = to_bytes(&m, serde_json::Value::Null).unwrap();
        assert!(matches!(from_bytes::<f64>(&bytes[..bytes.len() - 3]), Err(Error::Format { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes::<f64>(&bad), Err(Error::Format { offset: 0, .. })));
        let mut long = bytes;
        long.push(0);
        assert!(from_bytes::<f64>(&long).is_err());
    }
}
