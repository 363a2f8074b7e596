//! Checkpoint files.
//!
//! Layout: magic `SPCKPT`, u32 LE format version, u64 LE header length, the
//! JSON header, then each tensor's values as LE floats in header order.
//! The header carries no timestamps so identical parameters give identical
//! bytes.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::DType;
use serde::{Deserialize, Serialize};

use super::params::{HostTensor, ParamStore};
use crate::error::{Error, Result};
use crate::util::write_atomic;

const MAGIC: &[u8; 6] = b"SPCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// What the parameters belong to, e.g. `detector` or `acoustic`.
    pub kind: String,
    pub config_hash: String,
    pub seed: u64,
    pub step: u64,
    /// `f32` or `f64`.
    pub dtype: String,
    /// Kind-specific metadata (model config, vocabulary, normalization stats).
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub values: BTreeMap<String, HostTensor>,
}

impl Checkpoint {
    pub fn groups(&self) -> Vec<String> {
        let mut g: Vec<String> = self
            .values
            .keys()
            .map(|k| ParamStore::group_of(k).to_string())
            .collect();
        g.dedup();
        g
    }
}

fn dtype_name(d: DType) -> Result<&'static str> {
    match d {
        DType::F32 => Ok("f32"),
        DType::F64 => Ok("f64"),
        other => Err(Error::Checkpoint(format!("unsupported dtype {other:?}"))),
    }
}

pub fn save_checkpoint(
    path: &Path,
    store: &ParamStore,
    kind: &str,
    config_hash: &str,
    seed: u64,
    step: u64,
    meta: serde_json::Value,
) -> Result<()> {
    let values = store.to_host()?;
    let dtype = dtype_name(store.dtype())?;
    let header = CheckpointHeader {
        kind: kind.to_string(),
        config_hash: config_hash.to_string(),
        seed,
        step,
        dtype: dtype.to_string(),
        meta,
        tensors: values
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for t in values.values() {
        for &v in &t.data {
            if dtype == "f32" {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            } else {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    write_atomic(path, &buf)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: String| Error::Checkpoint(format!("{}: {m}", path.display()));
    if bytes.len() < 18 || &bytes[..6] != MAGIC {
        return Err(bad("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[10..18].try_into().unwrap()) as usize;
    let body = 18usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated header".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[18..body])?;
    let width = match header.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => return Err(bad(format!("unknown dtype '{other}'"))),
    };
    let mut pos = body;
    let mut values = BTreeMap::new();
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        let end = pos + n * width;
        if end > bytes.len() {
            return Err(bad(format!("truncated data for '{}'", entry.name)));
        }
        let data = bytes[pos..end]
            .chunks_exact(width)
            .map(|c| {
                if width == 4 {
                    f32::from_le_bytes(c.try_into().unwrap()) as f64
                } else {
                    f64::from_le_bytes(c.try_into().unwrap())
                }
            })
            .collect();
        values.insert(
            entry.name.clone(),
            HostTensor {
                shape: entry.shape.clone(),
                data,
            },
        );
        pos = end;
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes after tensor data".into()));
    }
    Ok(Checkpoint { header, values })
}
