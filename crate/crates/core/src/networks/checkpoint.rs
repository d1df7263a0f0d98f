//! Single-file tensor container.
//!
//! Layout: 8-byte magic `AESRCKP1`, little-endian `u64` header length, a JSON
//! header (metadata, tensor names, shapes, offsets, SHA-256 of the data block),
//! then every tensor as raw little-endian `f32` in header order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{fingerprint, ModelConfig, ModelState};
use crate::error::{Error, IoContext, Result};

const MAGIC: &[u8; 8] = b"AESRCKP1";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
    len: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: u32,
    meta: serde_json::Value,
    data_sha256: String,
    tensors: Vec<Entry>,
}

pub(crate) struct TensorFile {
    pub meta: serde_json::Value,
    pub tensors: BTreeMap<String, Tensor>,
}

pub(crate) fn write_tensor_file(path: &Path, file: &TensorFile) -> Result<()> {
    let mut data = Vec::new();
    let mut entries = Vec::new();
    for (name, t) in &file.tensors {
        let values = t.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?;
        entries.push(Entry {
            name: name.clone(),
            shape: t.dims().to_vec(),
            dtype: "f32".into(),
            offset: data.len() as u64,
            len: values.len() as u64,
        });
        for v in values {
            data.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = Header {
        format: FORMAT_VERSION,
        meta: file.meta.clone(),
        data_sha256: hex::encode(Sha256::digest(&data)),
        tensors: entries,
    };
    let header = serde_json::to_vec(&header)?;
    let mut bytes = Vec::with_capacity(16 + header.len() + data.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header);
    bytes.extend_from_slice(&data);

    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).at(dir)?;
    }
    let tmp = path.with_extension("partial");
    fs::write(&tmp, &bytes).at(&tmp)?;
    fs::rename(&tmp, path).at(path)
}

pub(crate) fn read_tensor_file(path: &Path) -> Result<TensorFile> {
    let corrupt = |reason: String| Error::CorruptCheckpoint {
        path: path.to_path_buf(),
        reason,
    };
    let bytes = fs::read(path).at(path)?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(corrupt("bad magic".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let data_start = 16usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| corrupt("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&bytes[16..data_start])
        .map_err(|e| corrupt(format!("header: {e}")))?;
    if header.format != FORMAT_VERSION {
        return Err(corrupt(format!("unsupported format {}", header.format)));
    }
    let data = &bytes[data_start..];
    if hex::encode(Sha256::digest(data)) != header.data_sha256 {
        return Err(corrupt("data checksum mismatch".into()));
    }
    let mut tensors = BTreeMap::new();
    for e in header.tensors {
        if e.dtype != "f32" || e.shape.iter().product::<usize>() as u64 != e.len {
            return Err(corrupt(format!("inconsistent entry `{}`", e.name)));
        }
        let start = e.offset as usize;
        let end = start + 4 * e.len as usize;
        let raw = data
            .get(start..end)
            .ok_or_else(|| corrupt(format!("entry `{}` out of bounds", e.name)))?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        tensors.insert(e.name, Tensor::from_vec(values, e.shape, &Device::Cpu)?);
    }
    Ok(TensorFile {
        meta: header.meta,
        tensors,
    })
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    config: ModelConfig,
    fingerprint: String,
    frozen: bool,
    training_step: u64,
}

/// Writes parameters as `f32`; `f64` states lose precision.
pub fn save_checkpoint(state: &ModelState, path: &Path) -> Result<()> {
    let meta = ModelMeta {
        config: state.config().clone(),
        fingerprint: state.fingerprint(),
        frozen: state.is_frozen(),
        training_step: state.training_step(),
    };
    let tensors = state
        .vars()
        .map(|(k, v)| (k.to_string(), v.as_tensor().clone()))
        .collect();
    write_tensor_file(
        path,
        &TensorFile {
            meta: serde_json::to_value(meta)?,
            tensors,
        },
    )
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    let file = read_tensor_file(path)?;
    let meta: ModelMeta = serde_json::from_value(file.meta).map_err(|e| Error::CorruptCheckpoint {
        path: path.to_path_buf(),
        reason: format!("metadata: {e}"),
    })?;
    let computed = fingerprint(&meta.config);
    if computed != meta.fingerprint {
        return Err(Error::CorruptCheckpoint {
            path: path.to_path_buf(),
            reason: "stored fingerprint does not match stored config".into(),
        });
    }
    ModelState::from_tensors(meta.config, file.tensors, meta.frozen, meta.training_step)
}

/// Loads a checkpoint and requires it to match `expected` exactly.
pub fn load_checkpoint_for(path: &Path, expected: &ModelConfig) -> Result<ModelState> {
    let state = load_checkpoint(path)?;
    let want = fingerprint(expected);
    if state.fingerprint() != want {
        return Err(Error::Fingerprint {
            expected: want,
            found: state.fingerprint(),
        });
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::{build_generator, GeneratorConfig, GeneratorInit};

    fn cfg(scale: usize) -> GeneratorConfig {
        GeneratorConfig {
            num_rrdb_blocks: 1,
            base_channels: 8,
            growth_channels: 4,
            scale,
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
        let mut g = build_generator(&cfg(2), GeneratorInit::Random { seed: 2 }).unwrap();
        g.set_training_step(17);
        g.freeze();
        save_checkpoint(&g, &a).unwrap();
        let back = load_checkpoint(&a).unwrap();
        assert!(back.is_frozen());
        assert_eq!(back.training_step(), 17);
        assert_eq!(back.checksum().unwrap(), g.checksum().unwrap());
        save_checkpoint(&back, &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }

    #[test]
    fn wrong_scale_is_a_fingerprint_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.ckpt");
        let g = build_generator(&cfg(2), GeneratorInit::Random { seed: 2 }).unwrap();
        save_checkpoint(&g, &p).unwrap();
        let r = build_generator(&cfg(4), GeneratorInit::Pretrained(&p));
        assert!(matches!(r, Err(Error::Fingerprint { .. })));
        let ok = build_generator(&cfg(2), GeneratorInit::Pretrained(&p)).unwrap();
        assert_eq!(ok.checksum().unwrap(), g.checksum().unwrap());
    }

    #[test]
    fn corruption_detected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.ckpt");
        let g = build_generator(&cfg(2), GeneratorInit::Random { seed: 2 }).unwrap();
        save_checkpoint(&g, &p).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        let n = bytes.len();
        bytes[n - 3] ^= 0x40;
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::CorruptCheckpoint { .. })));
        fs::write(&p, b"nonsense").unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::CorruptCheckpoint { .. })));
    }
}
