//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        6 bytes   "HLPNN1"
//! header_len   u32
//! header       header_len bytes of UTF-8 JSON (see CheckpointHeader)
//! param_count  u32
//! param_count times:
//!   name_len   u32
//!   name       name_len bytes UTF-8
//!   trainable  u8 (0 or 1)
//!   rank       u32
//!   dims       rank × u64
//!   values     product(dims) × f64
//! ```

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 6] = b"HLPNN1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config_hash: String,
    pub seed: u64,
    /// Free-form JSON the model layer needs to rebuild itself.
    #[serde(default)]
    pub metadata: serde_json::Value,
}

pub fn write_checkpoint<W: Write>(mut w: W, header: &CheckpointHeader, store: &ParamStore) -> Result<()> {
    w.write_all(MAGIC)?;
    let json = serde_json::to_vec(header).map_err(|e| TensorError::Format(e.to_string()))?;
    write_u32(&mut w, json.len())?;
    w.write_all(&json)?;
    write_u32(&mut w, store.len())?;
    for (_, name, t) in store.iter() {
        write_u32(&mut w, name.len())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[u8::from(t.requires_grad)])?;
        write_u32(&mut w, t.rank())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.numel() * 8);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(CheckpointHeader, ParamStore)> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(TensorError::Format("bad magic, not an HLPNN1 checkpoint".into()));
    }
    let hlen = read_u32(&mut r)?;
    let mut json = vec![0u8; hlen];
    r.read_exact(&mut json)?;
    let header: CheckpointHeader = serde_json::from_slice(&json).map_err(|e| TensorError::Format(e.to_string()))?;
    let count = read_u32(&mut r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let nlen = read_u32(&mut r)?;
        let mut name = vec![0u8; nlen];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| TensorError::Format(e.to_string()))?;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let rank = read_u32(&mut r)?;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut raw = vec![0u8; numel * 8];
        r.read_exact(&mut raw)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let t = Tensor::new(shape, data)?.with_requires_grad(flag[0] == 1);
        store.insert(name, t)?;
    }
    Ok((header, store))
}

fn write_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| TensorError::Format(format!("length {v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn round_trip_is_exact() {
        let mut rng = Rng::seed_from(3);
        let mut store = ParamStore::new();
        store.add("a.weight", Tensor::uniform(&[3, 4], -1.0, 1.0, &mut rng)).unwrap();
        store.insert("frozen", Tensor::scalar(std::f64::consts::PI)).unwrap();
        let header = CheckpointHeader {
            config_hash: "abc".into(),
            seed: 9,
            metadata: serde_json::json!({"k": 1}),
        };
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &header, &store).unwrap();
        assert_eq!(&buf[..6], b"HLPNN1");
        let (h2, s2) = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(h2, header);
        assert_eq!(s2, store);
    }

    #[test]
    fn rejects_wrong_magic() {
        assert!(read_checkpoint(&b"NOTIT1xxxx"[..]).is_err());
    }
}
