//! Binary model checkpoints.
//!
//! ```text
//! magic "PARC" | version u8 | kind: u16 len + utf8 | n_tensors u32
//! per tensor: name (u16 len + utf8) | trainable u8 | rank u8 | dims u32 x rank | f32 data
//! config: u32 len + utf8 JSON
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::ingest::Cursor;
use crate::tensor::{ParamStore, Real, Tensor};

pub const PARC_MAGIC: &[u8; 4] = b"PARC";
pub const PARC_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub tensors: Vec<Tensor<f32>>,
    pub config: serde_json::Value,
}

fn push_str16(out: &mut Vec<u8>, s: &str, what: &str) -> Result<()> {
    let len = u16::try_from(s.len()).map_err(|_| Error::InvalidInput(format!("{what} longer than 65535 bytes")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

/// Serializes every tensor of `store` (narrowed to f32) with a config echo.
pub fn encode_checkpoint<T: Real>(kind: &str, store: &ParamStore<T>, config: &serde_json::Value) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(PARC_MAGIC);
    out.push(PARC_VERSION);
    push_str16(&mut out, kind, "model kind")?;
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, t) in store.iter() {
        push_str16(&mut out, &t.name, "tensor name")?;
        out.push(t.trainable as u8);
        let rank = u8::try_from(t.shape.len()).map_err(|_| Error::InvalidInput(format!("tensor `{}` rank > 255", t.name)))?;
        out.push(rank);
        for &d in &t.shape {
            let d = u32::try_from(d).map_err(|_| Error::InvalidInput(format!("tensor `{}` dim overflows u32", t.name)))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&(v.widen() as f32).to_le_bytes());
        }
    }
    let cfg = serde_json::to_string(config)?;
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg.as_bytes());
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut c = Cursor::new(bytes);
    let magic = c.take(4, "magic")?;
    if magic != PARC_MAGIC {
        return Err(Error::Format {
            offset: 0,
            reason: format!("bad magic {magic:?}, expected \"PARC\""),
        });
    }
    let at = c.offset();
    let version = c.u8("version")?;
    if version != PARC_VERSION {
        return Err(Error::Format {
            offset: at,
            reason: format!("unsupported checkpoint version {version}"),
        });
    }
    let len = c.u16("kind length")? as usize;
    let kind = c.str(len, "kind")?.to_string();
    let n = c.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let len = c.u16("tensor name length")? as usize;
        let name = c.str(len, "tensor name")?.to_string();
        let trainable = c.u8("trainable flag")? != 0;
        let rank = c.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32("dim")? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Format {
                offset: c.offset(),
                reason: format!("tensor `{name}` shape overflows"),
            })?;
        let data = c.f32s(numel, "tensor data")?;
        tensors.push(Tensor { name, shape, data, trainable });
    }
    let len = c.u32("config length")? as usize;
    let at = c.offset();
    let config = serde_json::from_str(c.str(len, "config")?).map_err(|e| Error::Format {
        offset: at,
        reason: format!("config is not JSON: {e}"),
    })?;
    if !c.is_at_end() {
        return Err(Error::Format {
            offset: c.offset(),
            reason: "trailing bytes after config".into(),
        });
    }
    Ok(Checkpoint { kind, tensors, config })
}

pub fn write_checkpoint<T: Real>(
    path: impl AsRef<Path>,
    kind: &str,
    store: &ParamStore<T>,
    config: &serde_json::Value,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(kind, store, config)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

impl Checkpoint {
    /// Copies the stored values into `store`, which must hold tensors with the
    /// same names and shapes in the same order.
    pub fn restore_into<T: Real>(&self, store: &mut ParamStore<T>) -> Result<()> {
        if self.tensors.len() != store.len() {
            return Err(Error::InvalidInput(format!(
                "checkpoint has {} tensors, model has {}",
                self.tensors.len(),
                store.len()
            )));
        }
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for (id, src) in ids.into_iter().zip(&self.tensors) {
            let dst = store.get_mut(id);
            if dst.name != src.name || dst.shape != src.shape {
                return Err(Error::InvalidInput(format!(
                    "checkpoint tensor `{}` {:?} does not match model tensor `{}` {:?}",
                    src.name, src.shape, dst.name, dst.shape
                )));
            }
            for (d, &s) in dst.data.iter_mut().zip(&src.data) {
                *d = T::narrow(s as f64);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add("a", &[2, 3], vec![1.0, -2.5, 3.0, f32::MIN_POSITIVE, 0.0, -0.0], false);
        s.add("b", &[4], vec![0.1, 0.2, 0.3, 0.4], true);
        s
    }

    #[test]
    fn round_trip() {
        let cfg = serde_json::json!({"lr": 0.001, "name": "x"});
        let bytes = encode_checkpoint("shallow", &store(), &cfg).unwrap();
        let c = decode_checkpoint(&bytes).unwrap();
        assert_eq!(c.kind, "shallow");
        assert_eq!(c.config, cfg);
        assert_eq!(c.tensors, store().into_tensors());
        let mut fresh: ParamStore<f32> = ParamStore::new();
        fresh.zeros("a", &[2, 3], false);
        fresh.zeros("b", &[4], true);
        c.restore_into(&mut fresh).unwrap();
        assert_eq!(fresh, store());
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = encode_checkpoint("k", &store(), &serde_json::Value::Null).unwrap();
        let err = decode_checkpoint(&bytes[..20]).unwrap_err();
        assert!(matches!(err, Error::Format { offset, .. } if offset <= 20));
        assert!(matches!(decode_checkpoint(b"PARE\x01"), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let c = decode_checkpoint(&encode_checkpoint("k", &store(), &serde_json::Value::Null).unwrap()).unwrap();
        let mut other: ParamStore<f32> = ParamStore::new();
        other.zeros("a", &[3, 2], false);
        other.zeros("b", &[4], true);
        assert!(c.restore_into(&mut other).is_err());
    }
}
