//! Parameter checkpoint files.
//!
//! Layout: an 8-byte little-endian header length, a UTF-8 JSON header, then a
//! raw little-endian blob. The header carries free-form `meta` plus an index
//! `{name → {shape, dtype, offset, trainable}}`; offsets are byte offsets into
//! the blob. `f64` entries round-trip bit-exactly; `f32` entries are a compact
//! export format.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const FORMAT_TAG: &str = "statenet-ckpt/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub shape: Vec<usize>,
    pub dtype: Dtype,
    pub offset: usize,
    #[serde(default = "default_true")]
    pub trainable: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format: String,
    #[serde(default)]
    meta: serde_json::Value,
    tensors: BTreeMap<String, TensorEntry>,
}

pub fn encode(params: &ParamSet, meta: &serde_json::Value, dtype: Dtype) -> Vec<u8> {
    let mut tensors = BTreeMap::new();
    let mut blob = Vec::new();
    for p in params.iter() {
        tensors.insert(
            p.name.clone(),
            TensorEntry {
                shape: p.value.shape().to_vec(),
                dtype,
                offset: blob.len(),
                trainable: p.trainable,
            },
        );
        for &v in p.value.data() {
            match dtype {
                Dtype::F64 => blob.extend_from_slice(&v.to_le_bytes()),
                Dtype::F32 => blob.extend_from_slice(&(v as f32).to_le_bytes()),
            }
        }
    }
    let header = Header {
        format: FORMAT_TAG.to_string(),
        meta: meta.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + json.len() + blob.len());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    out
}

pub fn decode(bytes: &[u8]) -> Result<(ParamSet, serde_json::Value)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 8 {
        return Err(bad("truncated header length"));
    }
    let hlen = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() < hlen {
        return Err(bad("truncated header"));
    }
    let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if header.format != FORMAT_TAG {
        return Err(Error::Checkpoint(format!("unknown format `{}`", header.format)));
    }
    let blob = &body[hlen..];
    let mut entries: Vec<(&String, &TensorEntry)> = header.tensors.iter().collect();
    entries.sort_by_key(|(_, e)| e.offset);
    let mut params = ParamSet::new();
    for (name, e) in entries {
        let n: usize = e.shape.iter().product();
        let w = e.dtype.width();
        let end = e.offset + n * w;
        if end > blob.len() {
            return Err(Error::Checkpoint(format!("tensor `{name}` exceeds blob")));
        }
        let raw = &blob[e.offset..end];
        let data: Vec<f64> = match e.dtype {
            Dtype::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            Dtype::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
        };
        let id = params.insert(name.clone(), Tensor::new(e.shape.clone(), data)?)?;
        params.get_mut(id).trainable = e.trainable;
    }
    Ok((params, header.meta))
}

/// Hex SHA-256 of a byte string; fingerprints checkpoints.
pub fn digest(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

pub fn save(path: &Path, params: &ParamSet, meta: &serde_json::Value) -> Result<()> {
    fs::write(path, encode(params, meta, Dtype::F64)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(ParamSet, serde_json::Value)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
