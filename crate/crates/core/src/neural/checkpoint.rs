//! Weight checkpoints: a flat little-endian `f32` blob plus a JSON manifest.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::train::{StopReason, TrainConfig, TrainedNet};
use super::{FactorGroup, NetSpec, Network, NeuralError, Scalar};
use crate::digest::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub dtype: String,
    pub blob: String,
    pub blob_sha256: String,
    pub spec: NetSpec,
    pub input_width: usize,
    pub groups: Option<Vec<FactorGroup>>,
    pub tensors: Vec<TensorEntry>,
    pub config: TrainConfig,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub stopped_reason: StopReason,
    pub epochs_run: usize,
}

/// Writes `<stem>.bin` and `<stem>.json`; returns the manifest path.
pub fn save_checkpoint<T: Scalar>(trained: &TrainedNet<T>, stem: &Path) -> Result<PathBuf, NeuralError> {
    let net = &trained.net;
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    let mut offset = 0;
    let mut push = |name: String, shape: Vec<usize>, values: &mut dyn Iterator<Item = T>| {
        let mut count = 0;
        for v in values {
            blob.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            count += 1;
        }
        tensors.push(TensorEntry { name, shape, offset });
        offset += count;
    };
    for (name, p) in net.param_names().iter().zip(net.params()) {
        push(name.clone(), vec![p.nrows(), p.ncols()], &mut p.iter().copied());
    }
    let (rm, rv) = net.running_stats();
    for (k, (m, v)) in rm.iter().zip(rv).enumerate() {
        push(format!("block{k}.running_mean"), vec![m.len()], &mut m.iter().copied());
        push(format!("block{k}.running_var"), vec![v.len()], &mut v.iter().copied());
    }
    let bin_path = stem.with_extension("bin");
    let json_path = stem.with_extension("json");
    fs::write(&bin_path, &blob)?;
    let manifest = CheckpointManifest {
        dtype: "f32-le".into(),
        blob: bin_path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
        blob_sha256: sha256_hex(&blob),
        spec: net.spec().clone(),
        input_width: net.input_width(),
        groups: net.groups().map(|g| g.to_vec()),
        tensors,
        config: trained.config.clone(),
        best_epoch: trained.best_epoch,
        best_val_mse: trained.best_val_mse,
        stopped_reason: trained.stopped_reason,
        epochs_run: trained.epochs_run,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| NeuralError::Checkpoint(e.to_string()))?;
    fs::write(&json_path, text)?;
    Ok(json_path)
}

/// Reads a checkpoint written by [`save_checkpoint`]. History and validation
/// rows are not stored and come back empty.
pub fn load_checkpoint(manifest_path: &Path) -> Result<TrainedNet<f32>, NeuralError> {
    let text = fs::read_to_string(manifest_path)?;
    let m: CheckpointManifest = serde_json::from_str(&text).map_err(|e| NeuralError::Checkpoint(e.to_string()))?;
    if m.dtype != "f32-le" {
        return Err(NeuralError::Checkpoint(format!("unsupported dtype {}", m.dtype)));
    }
    let bin_path = manifest_path.with_file_name(&m.blob);
    let bytes = fs::read(&bin_path)?;
    if sha256_hex(&bytes) != m.blob_sha256 {
        return Err(NeuralError::Checkpoint("blob digest mismatch".into()));
    }
    if bytes.len() % 4 != 0 {
        return Err(NeuralError::Checkpoint("blob length is not a multiple of 4".into()));
    }
    let values: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let slice = |e: &TensorEntry| -> Result<Vec<f32>, NeuralError> {
        let len: usize = e.shape.iter().product();
        values
            .get(e.offset..e.offset + len)
            .map(|s| s.to_vec())
            .ok_or_else(|| NeuralError::Checkpoint(format!("tensor {} exceeds the blob", e.name)))
    };
    let mut params = Vec::new();
    let mut running_mean = Vec::new();
    let mut running_var = Vec::new();
    for e in &m.tensors {
        let data = slice(e)?;
        if e.name.ends_with(".running_mean") {
            running_mean.push(Array1::from(data));
        } else if e.name.ends_with(".running_var") {
            running_var.push(Array1::from(data));
        } else {
            let [r, c] = e.shape[..] else {
                return Err(NeuralError::Checkpoint(format!("tensor {} is not 2-D", e.name)));
            };
            params.push(Array2::from_shape_vec((r, c), data).map_err(|err| NeuralError::Checkpoint(err.to_string()))?);
        }
    }
    let net = Network::from_parts(m.spec, m.input_width, m.groups, params, running_mean, running_var)?;
    Ok(TrainedNet {
        net,
        config: m.config,
        best_epoch: m.best_epoch,
        best_val_mse: m.best_val_mse,
        stopped_reason: m.stopped_reason,
        epochs_run: m.epochs_run,
        history: Vec::new(),
        best_val_rows: Vec::new(),
    })
}
