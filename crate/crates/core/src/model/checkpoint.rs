//! Checkpoints: a JSON header with the model config followed by one AVTF
//! record per named parameter.
//!
//! ```text
//! "AVCK" | version u32 = 1 | header_len u32 | header (UTF-8 JSON)
//!        | AVTF record for each header.params[i], in order
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::StanConfig;
use super::forward::Stan;
use crate::error::{Result, StanError};
use crate::io::avtf;

pub const MAGIC: [u8; 4] = *b"AVCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: StanConfig,
    pub params: Vec<ParamEntry>,
    /// Free-form provenance (epoch, metrics, ...).
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn encode(model: &Stan<f32>, meta: serde_json::Value) -> Result<Vec<u8>> {
    let params = model.params.params();
    let header = CheckpointHeader {
        config: model.config.clone(),
        params: params
            .iter()
            .map(|p| ParamEntry {
                name: p.name.clone(),
                shape: p.shape().to_vec(),
            })
            .collect(),
        meta,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in params {
        let rec = avtf::encode(&p.value).map_err(|kind| StanError::Config(format!("{}: {kind}", p.name)))?;
        out.extend_from_slice(&rec);
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(Stan<f32>, CheckpointHeader)> {
    let bad = StanError::Checkpoint;
    if bytes.len() < 12 || bytes[..4] != MAGIC {
        return Err(bad("missing AVCK magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(body)?;

    let expected = crate::model::StanParams::<f32>::expected_shapes(&header.config)?;
    let declared: Vec<(String, Vec<usize>)> = header
        .params
        .iter()
        .map(|p| (p.name.clone(), p.shape.clone()))
        .collect();
    if declared != expected {
        return Err(bad("parameter list does not match the stored config".into()));
    }

    let mut model = Stan::<f32>::new(header.config.clone())?;
    let mut off = 12 + hlen;
    for p in model.params.params_mut() {
        let (t, used) = avtf::decode_prefix(&bytes[off..]).map_err(|e| bad(format!("{}: {e}", p.name)))?;
        if t.shape() != p.shape() {
            return Err(bad(format!(
                "{} has shape {:?}, expected {:?}",
                p.name,
                t.shape(),
                p.shape()
            )));
        }
        p.value = t;
        off += used;
    }
    if off != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - off)));
    }
    Ok((model, header))
}

pub fn save(model: &Stan<f32>, meta: serde_json::Value, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(model, meta)?;
    fs::write(path, bytes).map_err(|e| StanError::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<(Stan<f32>, CheckpointHeader)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| StanError::io(path, e))?;
    decode(&bytes)
}
