//! Deployment artifacts: a model config plus the best checkpoint, copied to
//! `{artifact_root}/{job_id}/`, and single-bag inference from them.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::argmax_rows;
use crate::model::{ModelConfig, ModelParams};
use crate::store::PatchFeatureBag;
use crate::train::{decode_checkpoint, predict_bags, CHECKPOINT_BLOB, CHECKPOINT_MANIFEST};

pub const MODEL_CONFIG_FILE: &str = "model_config.json";

/// Deterministic artifact location for a job.
pub fn artifact_dir(artifact_root: &Path, job_id: &str) -> Result<PathBuf> {
    let plain = !job_id.is_empty()
        && job_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        && job_id != "."
        && job_id != "..";
    if !plain {
        return Err(Error::Config(format!("job id {job_id:?} is not a plain identifier")));
    }
    Ok(artifact_root.join(job_id))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_if_changed(path: &Path, bytes: &[u8]) -> Result<()> {
    if fs::read(path).is_ok_and(|existing| existing == bytes) {
        return Ok(());
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Copy the checkpoint in `checkpoint_dir` into the job's artifact
/// directory and write its model config next to it. The checkpoint is
/// verified first; output bytes depend only on the checkpoint.
pub fn package_artifacts(checkpoint_dir: &Path, job_id: &str, artifact_root: &Path) -> Result<PathBuf> {
    let manifest = read(&checkpoint_dir.join(CHECKPOINT_MANIFEST))
        .map_err(|e| Error::Integrity(format!("no checkpoint to package: {e}")))?;
    let blob = read(&checkpoint_dir.join(CHECKPOINT_BLOB))
        .map_err(|e| Error::Integrity(format!("no checkpoint to package: {e}")))?;
    let record = decode_checkpoint(&manifest, &blob)?;

    let dir = artifact_dir(artifact_root, job_id)?;
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut config = serde_json::to_vec_pretty(&record.model_config)?;
    config.push(b'\n');
    write_if_changed(&dir.join(CHECKPOINT_BLOB), &blob)?;
    write_if_changed(&dir.join(CHECKPOINT_MANIFEST), &manifest)?;
    write_if_changed(&dir.join(MODEL_CONFIG_FILE), &config)?;
    Ok(dir)
}

/// A reconstructed model. Immutable, so `predict` may run concurrently.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedModel {
    pub config: ModelConfig,
    pub params: ModelParams<f32>,
}

/// Rebuild the model from an artifact directory alone. Optimizer state in
/// the checkpoint is verified but not kept.
pub fn load_model(dir: &Path) -> Result<LoadedModel> {
    let config: ModelConfig = serde_json::from_slice(&read(&dir.join(MODEL_CONFIG_FILE))?)
        .map_err(|e| Error::Integrity(format!("{MODEL_CONFIG_FILE}: {e}")))?;
    config.validate()?;
    let record = decode_checkpoint(&read(&dir.join(CHECKPOINT_MANIFEST))?, &read(&dir.join(CHECKPOINT_BLOB))?)?;
    record.weights.check_layout(&config)?;
    if record.model_config != config {
        return Err(Error::Integrity(format!("{MODEL_CONFIG_FILE} disagrees with the checkpoint manifest")));
    }
    Ok(LoadedModel { config, params: record.weights })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub probabilities: BTreeMap<String, f64>,
    pub predicted_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<Vec<f64>>,
}

/// Eval-mode forward on a single bag. Ties in the argmax go to the
/// lowest class index.
pub fn predict(model: &LoadedModel, bag: &PatchFeatureBag) -> Result<InferenceResult> {
    bag.validate(model.config.feature_dim)?;
    let mut out = predict_bags(&model.params, &model.config, &[bag], 1)?;
    let predicted = argmax_rows(out.probs.view())[0];
    let probabilities =
        model.config.class_labels.iter().cloned().zip(out.probs.row(0).iter().copied()).collect();
    Ok(InferenceResult {
        probabilities,
        predicted_label: model.config.class_labels[predicted].clone(),
        attention: out.attention.pop().flatten(),
    })
}
