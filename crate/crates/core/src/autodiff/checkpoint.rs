//! Named-tensor checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "SRLCKPT\0"
//! version  u32
//! mlen     u64      byte length of the JSON manifest
//! manifest mlen bytes of UTF-8 JSON
//! payload  raw f64 values, tensors back to back in manifest order
//! ```
//!
//! The manifest lists `name`, `shape`, `dtype`, `offset` and `len` for each
//! tensor, plus a free-form `metadata` object (configs, vocabularies).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"SRLCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt checkpoint manifest: {0}")]
    Manifest(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: usize,
    len: usize,
    requires_grad: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    seed: u64,
    tensors: Vec<TensorEntry>,
    metadata: serde_json::Value,
}

pub fn save(path: &Path, params: &ParamStore, metadata: serde_json::Value) -> Result<(), CheckpointError> {
    let mut offset = 0;
    let tensors = params
        .iter()
        .map(|(_, p)| {
            let e = TensorEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                dtype: "f64".into(),
                offset,
                len: p.value.len(),
                requires_grad: p.requires_grad,
            };
            offset += p.value.len();
            e
        })
        .collect();
    let manifest = Manifest {
        version: VERSION,
        seed: params.seed(),
        tensors,
        metadata,
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, p) in params.iter() {
        for x in p.value.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ParamStore, serde_json::Value), CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut u32b = [0u8; 4];
    r.read_exact(&mut u32b)?;
    let version = u32::from_le_bytes(u32b);
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let mut u64b = [0u8; 8];
    r.read_exact(&mut u64b)?;
    let mlen = u64::from_le_bytes(u64b) as usize;
    let mut json = vec![0u8; mlen];
    r.read_exact(&mut json)?;
    let manifest: Manifest = serde_json::from_slice(&json).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let mut store = ParamStore::new(manifest.seed);
    for e in manifest.tensors {
        if e.dtype != "f64" {
            return Err(CheckpointError::Manifest(format!("dtype {} for {}", e.dtype, e.name)));
        }
        let data = values
            .get(e.offset..e.offset + e.len)
            .ok_or_else(|| CheckpointError::Manifest(format!("{} runs past payload", e.name)))?
            .to_vec();
        let t = Tensor::new(&e.shape, data).map_err(|err| CheckpointError::Manifest(err.to_string()))?;
        store.insert(&e.name, t, e.requires_grad);
    }
    Ok((store, manifest.metadata))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Init;

    #[test]
    fn round_trip_preserves_bits() {
        let mut p = ParamStore::new(9);
        p.add("a", &[2, 3], Init::Glorot);
        let b = p.add("b", &[4], Init::Normal(1.0));
        p.set_requires_grad(b, false);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&path, &p, serde_json::json!({"k": 1})).unwrap();
        let (q, meta) = load(&path).unwrap();
        assert_eq!(meta["k"], 1);
        assert_eq!(q.len(), 2);
        for ((_, x), (_, y)) in p.iter().zip(q.iter()) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.value, y.value);
            assert_eq!(x.requires_grad, y.requires_grad);
        }
    }

    #[test]
    fn rejects_foreign_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x");
        std::fs::write(&path, b"definitely not a checkpoint").unwrap();
        assert!(matches!(load(&path), Err(CheckpointError::BadMagic)));
    }
}
