use serde::{Deserialize, Serialize};

use super::heads::{danet_masks, kmeans_masks, mask_set};
use super::network::EmbeddingNetwork;
use super::train::LossHead;
use super::{ModelError, StftConfig};
use crate::clustering::{kmeans, unfolded_kmeans_layer, AttractorSet, ClusterConfig, Metric, Weighting};
use crate::diffcore::{Tape, Var};
use crate::dsp::{apply_mask, energy_topfrac_indicator, istft, resample, MaskSet, Spectrogram, Waveform};

/// Where inference attractors come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Strategy {
    /// Fixed attractors clustered from the training history.
    #[serde(rename = "e1")]
    Fixed,
    /// Euclidean k-means on the embeddings.
    #[serde(rename = "e2-euclid")]
    KmeansEuclidean,
    /// Spherical k-means on the embeddings.
    #[default]
    #[serde(rename = "e2-spherical")]
    KmeansSpherical,
    /// The unrolled layer used by the k-means head, with the model's metric.
    #[serde(rename = "unfolded")]
    Unfolded,
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "e1" | "fixed" => Ok(Self::Fixed),
            "e2-euclid" | "e2-euclidean" => Ok(Self::KmeansEuclidean),
            "e2-spherical" => Ok(Self::KmeansSpherical),
            "unfolded" => Ok(Self::Unfolded),
            _ => Err(format!("unknown strategy '{s}' (e1|e2-euclid|e2-spherical|unfolded)")),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Fixed => "e1",
            Self::KmeansEuclidean => "e2-euclid",
            Self::KmeansSpherical => "e2-spherical",
            Self::Unfolded => "unfolded",
        })
    }
}

/// How clustered centroids become masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MaskRule {
    /// Dot-product masks for the danet head, metric masks for the k-means head.
    #[default]
    Auto,
    /// `softmax(vᵀc)`, treating centroids as attractors.
    Attractor,
    /// `softmax(−‖v−c‖)` (Euclidean) or `softmax(vᵀc)` (spherical).
    Metric,
}

impl std::str::FromStr for MaskRule {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "auto" => Ok(Self::Auto),
            "attractor" | "dot" => Ok(Self::Attractor),
            "metric" => Ok(Self::Metric),
            _ => Err(format!("unknown mask rule '{s}' (auto|attractor|metric)")),
        }
    }
}

impl std::fmt::Display for MaskRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Auto => "auto",
            Self::Attractor => "attractor",
            Self::Metric => "metric",
        })
    }
}

/// A network together with everything inference needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub net: EmbeddingNetwork,
    pub stft: StftConfig,
    pub head: LossHead,
    /// Clustering metric of the k-means head (and of `Strategy::Unfolded`).
    pub metric: Metric,
    pub temperature: f64,
    pub final_uniform: bool,
    pub fixed: Option<AttractorSet>,
}

impl Model {
    pub fn new(net: EmbeddingNetwork, stft: StftConfig) -> Self {
        Self {
            net,
            stft,
            head: LossHead::Danet,
            metric: Metric::Spherical,
            temperature: 1.0,
            final_uniform: false,
            fixed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparateOptions {
    /// Number of sources to extract.
    pub k: usize,
    pub strategy: Strategy,
    /// Clustering iterations (a cap for E2, the exact count for the unrolled path).
    pub iterations: usize,
    pub mask_rule: MaskRule,
    pub seed: u64,
    /// Fraction of highest-energy bins that take part in clustering; 1 uses
    /// every bin. Excluded bins still receive masks.
    pub cluster_fraction: f64,
}

impl Default for SeparateOptions {
    fn default() -> Self {
        Self {
            k: 2,
            strategy: Strategy::KmeansSpherical,
            iterations: 20,
            mask_rule: MaskRule::Auto,
            seed: 0,
            cluster_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpectralSeparation {
    pub masks: MaskSet,
    /// Masked spectrograms carrying the mixture phase.
    pub estimates: Vec<Spectrogram>,
}

fn clustered_masks(
    model: &Model,
    tape: &mut Tape,
    v: Var,
    centroids: Var,
    metric: Metric,
    rule: MaskRule,
) -> Result<Var, ModelError> {
    let use_metric = match rule {
        MaskRule::Auto => model.head == LossHead::KmeansDanet,
        MaskRule::Attractor => false,
        MaskRule::Metric => true,
    };
    if use_metric {
        kmeans_masks(tape, v, centroids, metric, model.temperature)
    } else {
        danet_masks(tape, v, centroids)
    }
}

/// Masks and masked spectrograms for a mixture spectrogram.
pub fn separate_spectrogram(
    model: &Model,
    mix: &Spectrogram,
    opts: &SeparateOptions,
) -> Result<SpectralSeparation, ModelError> {
    if opts.k == 0 || opts.iterations == 0 {
        return Err(ModelError::Config("k and iterations must be positive".into()));
    }
    if !(opts.cluster_fraction > 0.0 && opts.cluster_fraction <= 1.0) {
        return Err(ModelError::Config(format!(
            "cluster_fraction must be in (0, 1], got {}",
            opts.cluster_fraction
        )));
    }
    let mut tape = Tape::new();
    let bound = model.net.bind(&mut tape);
    let v = model.net.embed(&mut tape, &bound, mix)?;
    let mut weights: Vec<f64> = mix.magnitude.iter().map(|x| x * x).collect();
    if opts.cluster_fraction < 1.0 {
        let keep = energy_topfrac_indicator(mix, opts.cluster_fraction)?;
        for (w, k) in weights.iter_mut().zip(keep) {
            if !k {
                *w = 0.0;
            }
        }
    }
    let cluster = |metric: Metric| ClusterConfig {
        k: opts.k,
        metric,
        iterations: opts.iterations,
        weighting: Weighting::Energy,
        seed: opts.seed,
        final_uniform: model.final_uniform,
        ..Default::default()
    };
    let masks = match opts.strategy {
        Strategy::Fixed => {
            let fixed = model
                .fixed
                .as_ref()
                .ok_or_else(|| ModelError::Mismatch("model has no fixed attractors for E1".into()))?;
            if fixed.k() != opts.k {
                return Err(ModelError::Mismatch(format!(
                    "fixed attractors were built for k = {}, requested k = {}",
                    fixed.k(),
                    opts.k
                )));
            }
            if fixed.dim() != model.net.config.dim {
                return Err(ModelError::Mismatch("fixed attractor dimension differs from the network".into()));
            }
            let a = tape.constant(fixed.vectors.clone());
            danet_masks(&mut tape, v, a)?
        }
        Strategy::KmeansEuclidean | Strategy::KmeansSpherical => {
            let metric = if opts.strategy == Strategy::KmeansEuclidean {
                Metric::Euclidean
            } else {
                Metric::Spherical
            };
            let state = kmeans(tape.value(v), &weights, &cluster(metric))?;
            let c = tape.constant(state.centroids);
            clustered_masks(model, &mut tape, v, c, metric, opts.mask_rule)?
        }
        Strategy::Unfolded => {
            let out = unfolded_kmeans_layer(&mut tape, v, &weights, &cluster(model.metric))?;
            clustered_masks(model, &mut tape, v, out.centroids, model.metric, opts.mask_rule)?
        }
    };
    let masks = mask_set(tape.value(masks), mix.frames, mix.bins)?;
    let estimates = apply_mask(mix, &masks)?;
    Ok(SpectralSeparation { masks, estimates })
}

#[derive(Debug, Clone)]
pub struct Separation {
    pub waveforms: Vec<Waveform>,
    pub masks: MaskSet,
}

/// Separates a waveform into `opts.k` waveforms of the input's length and
/// sample rate.
pub fn separate(model: &Model, mix: &Waveform, opts: &SeparateOptions) -> Result<Separation, ModelError> {
    let spec = model.stft.analyze(mix)?;
    let sep = separate_spectrogram(model, &spec, opts)?;
    let waveforms = sep
        .estimates
        .iter()
        .map(|s| {
            let mut w = istft(s);
            if w.sample_rate != mix.sample_rate {
                w = resample(&w, mix.sample_rate)?;
            }
            w.samples.resize(mix.len(), 0.0);
            Ok(w)
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    Ok(Separation {
        waveforms,
        masks: sep.masks,
    })
}
