//! Checkpoint container: `"DPSR"`, u32 version, u64 metadata length, JSON
//! metadata, then every tensor as little-endian f32 in metadata order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::FeatureOptions;
use crate::towers::{TowerConfig, TwoTower};

pub const MAGIC: &[u8; 4] = b"DPSR";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorMeta {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Everything besides the weights that is needed to use a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    /// Hash of the vocabulary the towers were trained against.
    pub vocab_hash: String,
    /// Softmax temperature used in training; needed to reproduce scores.
    pub beta: f64,
    /// Feature ids the towers were trained with.
    #[serde(default)]
    pub features: FeatureOptions,
}

impl ModelInfo {
    pub fn new(vocab_hash: impl Into<String>, beta: f64) -> Self {
        Self {
            vocab_hash: vocab_hash.into(),
            beta,
            features: FeatureOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: TowerConfig,
    #[serde(flatten)]
    pub info: ModelInfo,
    pub tensors: Vec<TensorMeta>,
}

pub fn to_bytes(towers: &TwoTower, info: &ModelInfo) -> Vec<u8> {
    let views = towers.tensors();
    let meta = CheckpointMeta {
        config: towers.config.clone(),
        info: info.clone(),
        tensors: views
            .iter()
            .map(|v| TensorMeta {
                name: v.name.clone(),
                shape: v.shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&meta).expect("metadata serializes");
    let body_len: usize = views.iter().map(|v| v.data.len() * 4).sum();
    let mut out = Vec::with_capacity(16 + json.len() + body_len);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in views {
        for &x in v.data {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    out
}

pub fn save(path: impl AsRef<Path>, towers: &TwoTower, info: &ModelInfo) -> Result<()> {
    fs::write(path, to_bytes(towers, info))?;
    Ok(())
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Corrupt {
        what: "checkpoint",
        msg: msg.into(),
    }
}

/// Reads only the metadata block.
pub fn read_meta(bytes: &[u8]) -> Result<(CheckpointMeta, usize)> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(corrupt("bad magic or truncated header"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Version {
            what: "checkpoint",
            found: version,
            expected: VERSION,
        });
    }
    let meta_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body_start = 16usize
        .checked_add(meta_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| corrupt("truncated metadata"))?;
    let meta: CheckpointMeta =
        serde_json::from_slice(&bytes[16..body_start]).map_err(|e| corrupt(e.to_string()))?;
    Ok((meta, body_start))
}

pub fn from_bytes(bytes: &[u8]) -> Result<(TwoTower, CheckpointMeta)> {
    let (meta, body_start) = read_meta(bytes)?;
    meta.config
        .validate()
        .map_err(|e| corrupt(format!("invalid config: {e}")))?;
    // Shapes come from a freshly initialized model; the file must match them exactly.
    let mut towers = TwoTower::init(meta.config.clone(), 0)?;
    let expected: Vec<TensorMeta> = towers
        .tensors()
        .iter()
        .map(|v| TensorMeta {
            name: v.name.clone(),
            shape: v.shape.clone(),
        })
        .collect();
    if expected != meta.tensors {
        return Err(corrupt("tensor table does not match config"));
    }
    let body = &bytes[body_start..];
    let total: usize = expected.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if body.len() != total * 4 {
        return Err(corrupt(format!(
            "body has {} bytes, expected {}",
            body.len(),
            total * 4
        )));
    }
    let mut floats = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
    for slot in towers.tensors_mut() {
        for v in slot.iter_mut() {
            *v = floats.next().expect("length checked");
        }
    }
    Ok((towers, meta))
}

pub fn load(path: impl AsRef<Path>) -> Result<(TwoTower, CheckpointMeta)> {
    from_bytes(&fs::read(path)?)
}
