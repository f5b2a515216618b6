//! Checkpoint files: a magic line, one JSON header line, then the parameter
//! values as little-endian f32 in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{io_err, HarnessError};
use crate::models::{ModelConfig, TransformerModel};
use crate::tensor::{ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &str = "clego-checkpoint v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub global_epoch: usize,
    /// One-based experience index the checkpoint closes.
    pub experience: usize,
    /// Path relative to the run directory.
    pub path: String,
    /// SHA-256 of the whole file.
    pub digest: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorHeader>,
    payload_sha256: String,
}

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `model` to `dir/file` and returns its manifest entry.
pub fn save_checkpoint(
    model: &TransformerModel<f32>,
    dir: &Path,
    file: &str,
    global_epoch: usize,
    experience: usize,
) -> Result<CheckpointEntry, HarnessError> {
    let params = model.params();
    let mut payload = Vec::with_capacity(params.count() * 4);
    let mut tensors = Vec::with_capacity(params.len());
    for id in params.ids() {
        let t = params.value(id);
        tensors.push(TensorHeader { name: params.name(id).to_string(), shape: t.shape().to_vec() });
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = Header { config: model.config().clone(), tensors, payload_sha256: sha256_hex(&payload) };
    let mut bytes = format!("{CHECKPOINT_MAGIC}\n").into_bytes();
    bytes.extend(serde_json::to_vec(&header).expect("header serializes"));
    bytes.push(b'\n');
    bytes.extend(payload);

    let path = dir.join(file);
    let parent = path.parent().unwrap_or(dir);
    fs::create_dir_all(parent).map_err(io_err(parent))?;
    fs::write(&path, &bytes).map_err(io_err(&path))?;
    Ok(CheckpointEntry { global_epoch, experience, path: file.to_string(), digest: sha256_hex(&bytes) })
}

/// Reads a checkpoint, verifying its payload digest, the manifest digest
/// when given, and the model config when given.
pub fn load_checkpoint(
    path: &Path,
    expected_digest: Option<&str>,
    expected_config: Option<&ModelConfig>,
) -> Result<TransformerModel<f32>, HarnessError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let corrupt = |reason: &str| HarnessError::Corrupt { path: path.display().to_string(), reason: reason.into() };
    if let Some(want) = expected_digest {
        if sha256_hex(&bytes) != want {
            return Err(corrupt("digest does not match manifest"));
        }
    }
    let magic_end = CHECKPOINT_MAGIC.len() + 1;
    if bytes.len() < magic_end || &bytes[..magic_end - 1] != CHECKPOINT_MAGIC.as_bytes() {
        return Err(corrupt("missing header"));
    }
    let header_end = bytes[magic_end..].iter().position(|&b| b == b'\n').ok_or_else(|| corrupt("truncated header"))?
        + magic_end;
    let header: Header =
        serde_json::from_slice(&bytes[magic_end..header_end]).map_err(|e| corrupt(&format!("header: {e}")))?;
    let payload = &bytes[header_end + 1..];
    if sha256_hex(payload) != header.payload_sha256 {
        return Err(corrupt("payload digest mismatch"));
    }
    if let Some(cfg) = expected_config {
        if *cfg != header.config {
            return Err(HarnessError::ConfigMismatch(format!(
                "checkpoint is {} L={} H={} d={}, expected {} L={} H={} d={}",
                header.config.family(),
                header.config.num_layers,
                header.config.num_heads,
                header.config.hidden,
                cfg.family(),
                cfg.num_layers,
                cfg.num_heads,
                cfg.hidden
            )));
        }
    }
    let mut store = ParamStore::new();
    let mut offset = 0;
    for t in header.tensors {
        let n: usize = t.shape.iter().product();
        let end = offset + 4 * n;
        let chunk = payload.get(offset..end).ok_or_else(|| corrupt("payload too short"))?;
        let data = chunk.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        store.add(t.name, Tensor::new(t.shape, data).map_err(|e| corrupt(&e.to_string()))?);
        offset = end;
    }
    if offset != payload.len() {
        return Err(corrupt("trailing bytes after payload"));
    }
    Ok(TransformerModel::from_params(header.config, store)?)
}
