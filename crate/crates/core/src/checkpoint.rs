//! Model checkpoints: a JSON manifest next to a raw little-endian f64 blob.
//!
//! `model.json` holds the format version, the resolved training config and
//! one entry per parameter (name, shape, element offset into the blob,
//! trainable flag). The blob sits at the same path with a `.bin` extension.
//! Both files are byte-for-byte deterministic functions of the model.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::ParamSet;
use crate::error::{NoradError, Result};
use crate::tensor::Tensor;
use crate::trainer::{Model, TrainConfig};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub config: TrainConfig,
    /// Outer rounds completed when the snapshot was taken.
    pub round: Option<usize>,
    pub params: Vec<ParamEntry>,
    pub blob: String,
    pub blob_sha256: String,
}

pub fn blob_path(manifest_path: &Path) -> PathBuf {
    manifest_path.with_extension("bin")
}

fn encode_blob(params: &ParamSet) -> (Vec<ParamEntry>, Vec<u8>) {
    let mut entries = Vec::with_capacity(params.len());
    let mut bytes = Vec::new();
    let mut offset = 0;
    for p in params.iter() {
        entries.push(ParamEntry {
            name: p.name.clone(),
            shape: p.tensor.shape().to_vec(),
            offset,
            trainable: p.trainable,
        });
        for v in p.tensor.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        offset += p.tensor.len();
    }
    (entries, bytes)
}

/// Writes `path` and its blob, returning the manifest.
pub fn save(model: &Model, round: Option<usize>, path: &Path) -> Result<CheckpointManifest> {
    let (params, bytes) = encode_blob(&model.params);
    let blob = blob_path(path);
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        round,
        params,
        blob: blob
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        blob_sha256: hex::encode(Sha256::digest(&bytes)),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| NoradError::io(dir, e))?;
    }
    std::fs::write(&blob, &bytes).map_err(|e| NoradError::io(&blob, e))?;
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| NoradError::io(path, e))?;
    Ok(manifest)
}

/// Reads a checkpoint. A different format version is a compatibility error.
pub fn load(path: &Path) -> Result<(Model, CheckpointManifest)> {
    let text = std::fs::read_to_string(path).map_err(|e| NoradError::io(path, e))?;
    let raw: serde_json::Value = serde_json::from_str(&text)?;
    let version = raw.get("version").and_then(|v| v.as_u64());
    if version != Some(CHECKPOINT_VERSION as u64) {
        return Err(NoradError::Compatibility(format!(
            "checkpoint {} has version {:?}, this build reads version {CHECKPOINT_VERSION}",
            path.display(),
            version
        )));
    }
    let manifest: CheckpointManifest = serde_json::from_value(raw)?;
    let blob = path.with_file_name(&manifest.blob);
    let bytes = std::fs::read(&blob).map_err(|e| NoradError::io(&blob, e))?;
    if hex::encode(Sha256::digest(&bytes)) != manifest.blob_sha256 {
        return Err(NoradError::Consistency(format!("blob {} does not match its manifest hash", blob.display())));
    }
    if bytes.len() % 8 != 0 {
        return Err(NoradError::Consistency(format!("blob {} is not a whole number of f64 values", blob.display())));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let mut params = ParamSet::new();
    for e in &manifest.params {
        let len: usize = e.shape.iter().product();
        let data = values.get(e.offset..e.offset + len).ok_or_else(|| {
            NoradError::Consistency(format!("parameter {} runs past the end of the blob", e.name))
        })?;
        params.insert(&e.name, Tensor::new(e.shape.clone(), data.to_vec())?, e.trainable)?;
    }
    let model = Model {
        config: manifest.config.clone(),
        params,
    };
    let fresh = Model::init(model.config.clone(), model_feature_count(&model)?)?;
    for p in fresh.params.iter() {
        match model.params.get(&p.name) {
            Some(t) if t.shape() == p.tensor.shape() => {}
            Some(t) => return Err(NoradError::dim("checkpoint parameter", p.tensor.shape(), t.shape())),
            None => return Err(NoradError::Consistency(format!("checkpoint lacks parameter {}", p.name))),
        }
    }
    Ok((model, manifest))
}

fn model_feature_count(model: &Model) -> Result<usize> {
    let name = crate::encoder::self_weight(crate::encoder::HEADS[0]);
    model
        .params
        .get(&name)
        .map(|w| w.rows())
        .ok_or_else(|| NoradError::Consistency(format!("checkpoint lacks parameter {name}")))
}
