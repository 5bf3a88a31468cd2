//! Embedding network, attractor heads, losses, training and inference.

mod checkpoint;
mod heads;
mod network;
mod optim;
mod separate;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use heads::{
    danet_masks, dominance, ground_truth_attractors, kmeans_masks, mask_set, mse_loss, mse_value, pit_loss,
    DominanceIndicators, PIT_MAX_K,
};
pub use network::{Bound, CellType, EmbeddingNetwork, InputScaling, NetworkConfig};
pub use optim::{Adam, LrSchedule};
pub use separate::{separate, separate_spectrogram, MaskRule, Model, SeparateOptions, Separation, SpectralSeparation, Strategy};
pub use train::{
    cluster_seed, default_strategy, evaluate, load_utterances, train, utterance_gradients, utterance_loss,
    write_metrics_csv, EpochLog, LossHead, TrainConfig, TrainReport, Utterance, UtteranceGrad,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::ClusterError;
use crate::data::DataError;
use crate::diffcore::DiffError;
use crate::dsp::{frame_params, resample, stft, DspError, Spectrogram, Waveform};
use crate::metrics::MetricError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("model mismatch: {0}")]
    Mismatch(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Analysis parameters shared by training and inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub frame_ms: f64,
    pub overlap: f64,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            sample_rate: 8000,
            frame_ms: 64.0,
            overlap: 0.75,
        }
    }
}

impl StftConfig {
    /// Frequency bins per frame.
    pub fn bins(&self) -> Result<usize, ModelError> {
        let (frame, _) = frame_params(self.sample_rate, self.frame_ms, self.overlap)?;
        Ok(frame / 2 + 1)
    }

    /// Spectrogram at the model rate, resampling if needed.
    pub fn analyze(&self, w: &Waveform) -> Result<Spectrogram, ModelError> {
        if w.sample_rate == self.sample_rate {
            Ok(stft(w, self.frame_ms, self.overlap)?)
        } else {
            Ok(stft(&resample(w, self.sample_rate)?, self.frame_ms, self.overlap)?)
        }
    }
}
