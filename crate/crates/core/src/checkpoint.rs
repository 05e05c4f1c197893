//! Binary checkpoints: `CXAT`, a version byte, a little-endian u64 header
//! length, a JSON header (config, parameter names and shapes, metadata),
//! then every parameter value as a little-endian f64 in header order.

use std::fs;
use std::path::Path;

use cxa_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{CoreError, Result};
use crate::model::Model;

pub const MAGIC: &[u8; 4] = b"CXAT";
pub const VERSION: u8 = 1;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMeta {
    pub epoch: usize,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    params: Vec<ParamEntry>,
    meta: TrainingMeta,
}

pub fn encode_checkpoint(model: &Model, meta: &TrainingMeta) -> Vec<u8> {
    let header = Header {
        config: model.config.clone(),
        params: model
            .params
            .names()
            .iter()
            .zip(model.params.tensors())
            .map(|(n, t)| ParamEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(13 + json.len() + 8 * model.params.num_values());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in model.params.tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parses a checkpoint completely before building the model, so a damaged
/// file never yields a partially loaded one.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Model, TrainingMeta)> {
    if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
        return Err(CoreError::BadMagic);
    }
    let version = *bytes.get(4).ok_or_else(|| CoreError::TruncatedCheckpoint("no version byte".into()))?;
    if version != VERSION {
        return Err(CoreError::VersionMismatch {
            found: version,
            supported: VERSION,
        });
    }
    let len_bytes: [u8; 8] = bytes
        .get(5..13)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| CoreError::TruncatedCheckpoint("no header length".into()))?;
    let header_len = usize::try_from(u64::from_le_bytes(len_bytes))
        .map_err(|_| CoreError::CorruptHeader("header length overflows".into()))?;
    let header_end = 13usize
        .checked_add(header_len)
        .ok_or_else(|| CoreError::CorruptHeader("header length overflows".into()))?;
    let json = bytes
        .get(13..header_end)
        .ok_or_else(|| CoreError::TruncatedCheckpoint(format!("header of {header_len} bytes is cut off")))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| CoreError::CorruptHeader(e.to_string()))?;

    let mut model = Model::new(header.config, 0).map_err(|e| CoreError::CorruptHeader(e.to_string()))?;
    if header.params.len() != model.params.len() {
        return Err(CoreError::CorruptHeader(format!(
            "{} parameters listed, the configured model has {}",
            header.params.len(),
            model.params.len()
        )));
    }
    for (entry, (name, t)) in header.params.iter().zip(model.params.names().iter().zip(model.params.tensors())) {
        if &entry.name != name {
            return Err(CoreError::CorruptHeader(format!(
                "parameter `{}` where `{name}` was expected",
                entry.name
            )));
        }
        if entry.shape != t.shape() {
            return Err(CoreError::ParameterShape {
                name: name.clone(),
                expected: t.shape().to_vec(),
                found: entry.shape.clone(),
            });
        }
    }
    let body = &bytes[header_end..];
    let needed = 8 * model.params.num_values();
    if body.len() < needed {
        return Err(CoreError::TruncatedCheckpoint(format!(
            "{} of {needed} parameter bytes present",
            body.len()
        )));
    }
    if body.len() > needed {
        return Err(CoreError::CorruptHeader(format!("{} trailing bytes", body.len() - needed)));
    }
    let mut values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let tensors = model
        .params
        .tensors()
        .iter()
        .map(|t| {
            let data: Vec<f64> = values.by_ref().take(t.len()).collect();
            Tensor::new(t.shape().to_vec(), data)
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    model.params.replace_tensors(tensors);
    Ok((model, header.meta))
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model, meta: &TrainingMeta) -> Result<()> {
    fs::write(path, encode_checkpoint(model, meta))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model, TrainingMeta)> {
    decode_checkpoint(&fs::read(path)?)
}
