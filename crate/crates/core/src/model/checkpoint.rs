//! Checkpoint persistence: a JSON manifest naming parameter paths, shapes,
//! and byte offsets, plus one little-endian raw `f32` blob. Round-trips are
//! bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::PipelineError;
use crate::model::{ModelConfig, ModelState};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub path: String,
    pub kind: EntryKind,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
    /// Element count.
    pub len: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Param,
    Buffer,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub dtype: String,
    pub config: ModelConfig,
    pub blob: String,
    pub entries: Vec<CheckpointEntry>,
}

fn blob_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("json"), stem.with_extension("bin"))
}

/// Write `{stem}.json` and `{stem}.bin`.
pub fn save(state: &ModelState<f32>, stem: &Path) -> Result<(), PipelineError> {
    let (manifest_path, blob_path) = blob_paths(stem);
    let mut entries = Vec::new();
    let mut blob: Vec<u8> = Vec::new();
    let push = |path: &str, kind: EntryKind, tensor: &Tensor<f32>, blob: &mut Vec<u8>, entries: &mut Vec<CheckpointEntry>| {
        let offset = blob.len();
        for v in tensor.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        entries.push(CheckpointEntry {
            path: path.to_string(),
            kind,
            shape: tensor.shape().to_vec(),
            offset,
            len: tensor.numel(),
        });
    };
    for (path, tensor) in state.params() {
        push(path, EntryKind::Param, tensor, &mut blob, &mut entries);
    }
    for (path, tensor) in state.buffers() {
        push(path, EntryKind::Buffer, tensor, &mut blob, &mut entries);
    }
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION,
        dtype: "f32le".into(),
        config: *state.config(),
        blob: blob_path.file_name().unwrap().to_string_lossy().into_owned(),
        entries,
    };
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest).expect("manifest serializes"))
        .map_err(|e| PipelineError::Checkpoint(format!("write {}: {e}", manifest_path.display())))?;
    fs::write(&blob_path, &blob)
        .map_err(|e| PipelineError::Checkpoint(format!("write {}: {e}", blob_path.display())))?;
    Ok(())
}

/// Load a checkpoint written by [`save`]; `stem` may be the manifest path or
/// the common stem.
pub fn load(stem: &Path) -> Result<ModelState<f32>, PipelineError> {
    let manifest_path = if stem.extension().map(|e| e == "json").unwrap_or(false) {
        stem.to_path_buf()
    } else {
        stem.with_extension("json")
    };
    let raw = fs::read_to_string(&manifest_path)
        .map_err(|e| PipelineError::Checkpoint(format!("read {}: {e}", manifest_path.display())))?;
    let manifest: CheckpointManifest = serde_json::from_str(&raw)
        .map_err(|e| PipelineError::Checkpoint(format!("parse {}: {e}", manifest_path.display())))?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(PipelineError::Checkpoint(format!("unsupported version {}", manifest.version)));
    }
    if manifest.dtype != "f32le" {
        return Err(PipelineError::Checkpoint(format!("unsupported dtype {}", manifest.dtype)));
    }
    let blob_path = manifest_path.with_file_name(&manifest.blob);
    let blob = fs::read(&blob_path)
        .map_err(|e| PipelineError::Checkpoint(format!("read {}: {e}", blob_path.display())))?;
    let expected: usize = manifest.entries.iter().map(|e| e.len * 4).sum();
    if blob.len() != expected {
        return Err(PipelineError::Checkpoint(format!(
            "blob {}: expected {expected} bytes, found {}",
            blob_path.display(),
            blob.len()
        )));
    }
    let mut params = BTreeMap::new();
    let mut buffers = BTreeMap::new();
    for entry in &manifest.entries {
        let end = entry.offset + entry.len * 4;
        if end > blob.len() {
            return Err(PipelineError::Checkpoint(format!(
                "entry {} overruns blob ({} > {})",
                entry.path,
                end,
                blob.len()
            )));
        }
        let mut data = Vec::with_capacity(entry.len);
        for chunk in blob[entry.offset..end].chunks_exact(4) {
            data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
        }
        let tensor = Tensor::new(data, &entry.shape)
            .map_err(|e| PipelineError::Checkpoint(format!("entry {}: {e}", entry.path)))?;
        match entry.kind {
            EntryKind::Param => params.insert(entry.path.clone(), tensor),
            EntryKind::Buffer => buffers.insert(entry.path.clone(), tensor),
        };
    }
    Ok(ModelState::from_parts(manifest.config, params, buffers))
}

/// Check a loaded state against the parameter structure that `cfg` would
/// produce; errors list every offending path.
pub fn validate_against(state: &ModelState<f32>, cfg: &ModelConfig) -> Result<(), PipelineError> {
    let reference = ModelState::<f32>::init(cfg, 0).map_err(PipelineError::Tensor)?;
    let mut offending = Vec::new();
    let loaded: BTreeMap<&String, &[usize]> = state.params().map(|(k, v)| (k, v.shape())).collect();
    let expect: BTreeMap<&String, &[usize]> = reference.params().map(|(k, v)| (k, v.shape())).collect();
    for (path, shape) in &expect {
        match loaded.get(path) {
            None => offending.push(format!("{path} (missing)")),
            Some(s) if s != shape => offending.push(format!("{path} (shape {s:?} != {shape:?})")),
            _ => {}
        }
    }
    for path in loaded.keys() {
        if !expect.contains_key(*path) {
            offending.push(format!("{path} (unexpected)"));
        }
    }
    if offending.is_empty() {
        Ok(())
    } else {
        Err(PipelineError::Checkpoint(format!("checkpoint/config mismatch: {}", offending.join(", "))))
    }
}
