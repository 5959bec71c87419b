//! Checkpoint layout: a JSON manifest naming every tensor with its shape
//! and byte offset, plus one blob of little-endian f32 values.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::OptimizerKind;
use super::optim::OptimizerState;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};

pub const CHECKPOINT_BLOB: &str = "checkpoint_best.bin";
pub const CHECKPOINT_MANIFEST: &str = "checkpoint_best.manifest.json";
pub const CHECKPOINT_FORMAT: &str = "slidemil-checkpoint/1";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRecord {
    pub model_config: ModelConfig,
    pub weights: ModelParams<f32>,
    pub optimizer_state: OptimizerState<f32>,
    pub best_epoch: usize,
    pub best_metric_value: f64,
    pub train_config_digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub byte_offset: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimizerManifest {
    pub kind: OptimizerKind,
    pub step: u64,
    pub first_moment: Vec<TensorEntry>,
    pub second_moment: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub model_config: ModelConfig,
    pub best_epoch: usize,
    pub best_metric_value: f64,
    pub train_config_digest: String,
    pub weights: Vec<TensorEntry>,
    pub optimizer: OptimizerManifest,
    pub blob_bytes: u64,
    pub blob_sha256: String,
}

fn append<'a>(
    blob: &mut Vec<u8>,
    tensors: impl Iterator<Item = (&'a String, &'a Array2<f32>)>,
) -> Vec<TensorEntry> {
    tensors
        .map(|(name, t)| {
            let entry = TensorEntry {
                name: name.clone(),
                shape: vec![t.nrows(), t.ncols()],
                dtype: "f32".into(),
                byte_offset: blob.len() as u64,
            };
            for v in t.iter() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
            entry
        })
        .collect()
}

/// Encode to (manifest JSON, blob). Output depends only on the record.
pub fn encode_checkpoint(record: &CheckpointRecord) -> (Vec<u8>, Vec<u8>) {
    let mut blob = Vec::new();
    let weights = append(&mut blob, record.weights.iter());
    let first_moment = append(&mut blob, record.optimizer_state.first.iter());
    let second_moment = append(&mut blob, record.optimizer_state.second.iter());
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        model_config: record.model_config.clone(),
        best_epoch: record.best_epoch,
        best_metric_value: record.best_metric_value,
        train_config_digest: record.train_config_digest.clone(),
        weights,
        optimizer: OptimizerManifest {
            kind: record.optimizer_state.kind,
            step: record.optimizer_state.step,
            first_moment,
            second_moment,
        },
        blob_bytes: blob.len() as u64,
        blob_sha256: hex::encode(Sha256::digest(&blob)),
    };
    let mut json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    json.push(b'\n');
    (json, blob)
}

fn read_tensor(entry: &TensorEntry, blob: &[u8], claimed: &mut Vec<(u64, u64)>) -> Result<(String, Array2<f32>)> {
    let bad = |m: String| Error::Integrity(format!("tensor {}: {m}", entry.name));
    if entry.dtype != "f32" {
        return Err(bad(format!("unsupported dtype {}", entry.dtype)));
    }
    let &[rows, cols] = entry.shape.as_slice() else {
        return Err(bad(format!("expected a 2-d shape, got {:?}", entry.shape)));
    };
    let len = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| u64::try_from(n).ok())
        .ok_or_else(|| bad("shape overflows".into()))?;
    let end = entry.byte_offset.checked_add(len).ok_or_else(|| bad("extent overflows".into()))?;
    if end > blob.len() as u64 {
        return Err(bad(format!("extent {}..{end} exceeds blob of {} bytes", entry.byte_offset, blob.len())));
    }
    if claimed.iter().any(|&(s, e)| entry.byte_offset < e && s < end) {
        return Err(bad("overlaps another tensor".into()));
    }
    claimed.push((entry.byte_offset, end));
    let bytes = &blob[entry.byte_offset as usize..end as usize];
    let values = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let array = Array2::from_shape_vec((rows, cols), values).map_err(|e| bad(e.to_string()))?;
    Ok((entry.name.clone(), array))
}

/// Decode and verify a checkpoint. Never panics on malformed input.
pub fn decode_checkpoint(manifest: &[u8], blob: &[u8]) -> Result<CheckpointRecord> {
    let m: CheckpointManifest =
        serde_json::from_slice(manifest).map_err(|e| Error::Integrity(format!("manifest: {e}")))?;
    if m.format != CHECKPOINT_FORMAT {
        return Err(Error::Integrity(format!("unknown checkpoint format {:?}", m.format)));
    }
    if m.blob_bytes != blob.len() as u64 {
        return Err(Error::Integrity(format!("blob is {} bytes, manifest expects {}", blob.len(), m.blob_bytes)));
    }
    if hex::encode(Sha256::digest(blob)) != m.blob_sha256 {
        return Err(Error::Integrity("blob checksum mismatch".into()));
    }
    m.model_config.validate().map_err(|e| Error::Integrity(format!("model config: {e}")))?;
    let mut claimed = Vec::new();
    let mut tensors = |entries: &[TensorEntry]| -> Result<std::collections::BTreeMap<String, Array2<f32>>> {
        let mut out = std::collections::BTreeMap::new();
        for e in entries {
            let (name, t) = read_tensor(e, blob, &mut claimed)?;
            if out.insert(name, t).is_some() {
                return Err(Error::Integrity(format!("duplicate tensor {}", e.name)));
            }
        }
        Ok(out)
    };
    let weights = ModelParams::from_tensors(tensors(&m.weights)?);
    let first = tensors(&m.optimizer.first_moment)?;
    let second = tensors(&m.optimizer.second_moment)?;
    weights.check_layout(&m.model_config)?;
    Ok(CheckpointRecord {
        model_config: m.model_config,
        weights,
        optimizer_state: OptimizerState { kind: m.optimizer.kind, step: m.optimizer.step, first, second },
        best_epoch: m.best_epoch,
        best_metric_value: m.best_metric_value,
        train_config_digest: m.train_config_digest,
    })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Write `checkpoint_best.bin` and its manifest into `dir`. The blob is
/// renamed into place before the manifest so a reader never sees a
/// manifest describing a blob that is not there yet.
pub fn save_checkpoint(record: &CheckpointRecord, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (manifest, blob) = encode_checkpoint(record);
    write_atomic(&dir.join(CHECKPOINT_BLOB), &blob)?;
    let manifest_path = dir.join(CHECKPOINT_MANIFEST);
    write_atomic(&manifest_path, &manifest)?;
    Ok(manifest_path)
}

pub fn load_checkpoint(dir: &Path) -> Result<CheckpointRecord> {
    let read = |name: &str| {
        let p = dir.join(name);
        fs::read(&p).map_err(|e| Error::io(&p, e))
    };
    decode_checkpoint(&read(CHECKPOINT_MANIFEST)?, &read(CHECKPOINT_BLOB)?)
}
