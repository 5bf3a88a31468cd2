//! Single-file model checkpoints.
//!
//! Layout: the 8-byte magic `DANETCKP`, a little-endian `u32` header length,
//! a JSON header, then every tensor as little-endian `f64` values in header
//! order (network parameters first, fixed attractors last when present).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{EmbeddingNetwork, NetworkConfig};
use super::separate::Model;
use super::train::{LossHead, TrainConfig};
use super::{ModelError, StftConfig};
use crate::clustering::{AttractorSet, Metric, Provenance};
use crate::diffcore::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DANETCKP";
pub const CHECKPOINT_VERSION: u32 = 1;
const FLATTENING: &str = "time-major";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    /// Row order of the `TF×D` embedding matrix.
    pub flattening: String,
    pub architecture: NetworkConfig,
    pub embedding_dim: usize,
    pub stft: StftConfig,
    pub head: LossHead,
    pub metric: Metric,
    pub temperature: f64,
    pub final_uniform: bool,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub training: Option<TrainConfig>,
}

const FIXED: &str = "fixed_attractors";

fn io(path: &Path, e: impl std::fmt::Display) -> ModelError {
    ModelError::Io(format!("{}: {e}", path.display()))
}

pub fn save_checkpoint(path: &Path, model: &Model, training: Option<&TrainConfig>) -> Result<(), ModelError> {
    let mut tensors: Vec<(String, &Tensor)> = model
        .net
        .config
        .layout()
        .into_iter()
        .map(|(n, _)| n)
        .zip(model.net.params())
        .collect();
    if let Some(f) = &model.fixed {
        tensors.push((FIXED.to_string(), &f.vectors));
    }
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        flattening: FLATTENING.into(),
        architecture: model.net.config.clone(),
        embedding_dim: model.net.config.dim,
        stft: model.stft.clone(),
        head: model.head,
        metric: model.metric,
        temperature: model.temperature,
        final_uniform: model.final_uniform,
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape(),
            })
            .collect(),
        training: training.cloned(),
    };
    let json = serde_json::to_vec_pretty(&header).map_err(|e| io(path, e))?;
    let mut buf = Vec::with_capacity(12 + json.len() + 8 * model.net.num_weights());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for (_, t) in &tensors {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, CheckpointHeader), ModelError> {
    let bytes = fs::read(path).map_err(|e| io(path, e))?;
    let mismatch = |m: String| ModelError::Mismatch(format!("{}: {m}", path.display()));
    if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(mismatch("not a checkpoint file".into()));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = bytes.get(12..12 + hlen).ok_or_else(|| mismatch("truncated header".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(body).map_err(|e| mismatch(format!("unreadable header: {e}")))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(mismatch(format!("unsupported version {}", header.version)));
    }
    if header.flattening != FLATTENING {
        return Err(mismatch(format!("unsupported flattening '{}'", header.flattening)));
    }
    if header.embedding_dim != header.architecture.dim {
        return Err(mismatch("embedding dimension disagrees with the architecture".into()));
    }
    if header.stft.bins()? != header.architecture.bins {
        return Err(mismatch("analysis parameters disagree with the network input size".into()));
    }
    let mut offset = 12 + hlen;
    let mut read = |entry: &TensorEntry| -> Result<Tensor, ModelError> {
        let n = entry.shape[0] * entry.shape[1];
        let raw = bytes
            .get(offset..offset + 8 * n)
            .ok_or_else(|| mismatch(format!("truncated data for {}", entry.name)))?;
        offset += 8 * n;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Tensor::new(entry.shape[0], entry.shape[1], data)?)
    };
    let layout = header.architecture.layout();
    let n_params = layout.len();
    if header.tensors.len() < n_params {
        return Err(mismatch("missing parameter tensors".into()));
    }
    let mut params = Vec::with_capacity(n_params);
    for ((name, _), entry) in layout.iter().zip(&header.tensors) {
        if &entry.name != name {
            return Err(mismatch(format!("expected tensor {name}, found {}", entry.name)));
        }
        params.push(read(entry)?);
    }
    let mut fixed = None;
    for entry in &header.tensors[n_params..] {
        if entry.name != FIXED {
            return Err(mismatch(format!("unexpected tensor {}", entry.name)));
        }
        fixed = Some(AttractorSet::new(read(entry)?, Provenance::Fixed)?);
    }
    if offset != bytes.len() {
        return Err(mismatch(format!("{} trailing bytes", bytes.len() - offset)));
    }
    let net = EmbeddingNetwork::from_params(header.architecture.clone(), params)?;
    let model = Model {
        net,
        stft: header.stft.clone(),
        head: header.head,
        metric: header.metric,
        temperature: header.temperature,
        final_uniform: header.final_uniform,
        fixed,
    };
    Ok((model, header))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model() -> Model {
        let cfg = NetworkConfig {
            bins: 33,
            hidden: 4,
            layers: 1,
            cells: 2,
            dim: 3,
            ..Default::default()
        };
        let mut m = Model::new(
            EmbeddingNetwork::new(cfg, 7).unwrap(),
            StftConfig {
                frame_ms: 8.0,
                ..Default::default()
            },
        );
        m.head = LossHead::KmeansDanet;
        m.metric = Metric::Euclidean;
        m
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let mut m = small_model();
        m.fixed = Some(AttractorSet::new(Tensor::filled(2, 3, 0.25), Provenance::Fixed).unwrap());
        save_checkpoint(&p, &m, Some(&TrainConfig::default())).unwrap();
        let (back, header) = load_checkpoint(&p).unwrap();
        assert_eq!(back, m);
        assert_eq!(header.flattening, "time-major");
        assert_eq!(header.training, Some(TrainConfig::default()));
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..8], b"DANETCKP");
    }

    #[test]
    fn corrupted_files_are_mismatches() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&p, &small_model(), None).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes.pop();
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(ModelError::Mismatch(_))));
        fs::write(&p, b"not a model").unwrap();
        assert!(matches!(load_checkpoint(&p), Err(ModelError::Mismatch(_))));
    }
}
