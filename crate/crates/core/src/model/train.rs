use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::heads::{danet_masks, dominance, ground_truth_attractors, kmeans_masks, mse_loss, pit_loss, DominanceIndicators};
use super::network::EmbeddingNetwork;
use super::optim::{Adam, LrSchedule};
use super::separate::{separate_spectrogram, Model, SeparateOptions, Strategy};
use super::{ModelError, StftConfig};
use crate::clustering::{unfolded_kmeans_layer, AttractorSet, ClusterConfig, Metric, Provenance, Weighting};
use crate::data::{GeneratedMixture, MixtureRecord};
use crate::diffcore::Tape;
use crate::dsp::{energy_topfrac_indicator, istft, Spectrogram, Waveform};
use crate::metrics::si_sdri;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossHead {
    /// Ground-truth attractors, dot-product masks, MSE.
    #[default]
    Danet,
    /// Unrolled k-means attractors, metric-specific masks, permutation-invariant MSE.
    KmeansDanet,
}

impl std::str::FromStr for LossHead {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "danet" => Ok(Self::Danet),
            "kmeans_danet" => Ok(Self::KmeansDanet),
            _ => Err(format!("unknown head '{s}' (danet|kmeans-danet)")),
        }
    }
}

impl std::fmt::Display for LossHead {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Danet => "danet",
            Self::KmeansDanet => "kmeans-danet",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Utterances per optimizer step.
    pub batch_size: usize,
    pub lr: LrSchedule,
    /// Unrolled k-means iterations (k-means head only).
    pub unfold: usize,
    pub metric: Metric,
    /// Sources per training mixture; 0 accepts whatever each mixture has.
    pub k: usize,
    pub seed: u64,
    pub head: LossHead,
    /// Fraction of highest-energy bins used for ground-truth attractors.
    pub energy_fraction: f64,
    /// Softmax temperature of the Euclidean mask.
    pub temperature: f64,
    /// Uniform weights in the final spherical centroid recomputation.
    pub final_uniform: bool,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    /// Clustering iterations used for the per-epoch validation score.
    pub val_iterations: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 4,
            lr: LrSchedule::constant(1e-3),
            unfold: 5,
            metric: Metric::Spherical,
            k: 2,
            seed: 0,
            head: LossHead::Danet,
            energy_fraction: 0.9,
            temperature: 1.0,
            final_uniform: false,
            grad_clip: 0.0,
            val_iterations: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.epochs == 0 || self.batch_size == 0 || self.unfold == 0 || self.val_iterations == 0 {
            return bad("epochs, batch_size, unfold and val_iterations must be positive");
        }
        if !(self.lr.base > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(self.energy_fraction > 0.0 && self.energy_fraction <= 1.0) {
            return bad("energy_fraction must be in (0, 1]");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        if !(self.grad_clip >= 0.0) {
            return bad("grad_clip must be non-negative");
        }
        Ok(())
    }

    fn cluster_config(&self, k: usize, seed: u64) -> ClusterConfig {
        ClusterConfig {
            k,
            metric: self.metric,
            iterations: self.unfold,
            weighting: Weighting::Energy,
            seed,
            early_stop: false,
            final_uniform: self.final_uniform,
            ..Default::default()
        }
    }
}

/// A training or evaluation example with its spectrograms precomputed.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub mixture: Waveform,
    pub sources: Vec<Waveform>,
    pub mix_spec: Spectrogram,
    pub source_mags: Vec<Vec<f64>>,
}

impl Utterance {
    pub fn new(mixture: Waveform, sources: Vec<Waveform>, stft: &StftConfig) -> Result<Self, ModelError> {
        if sources.is_empty() {
            return Err(ModelError::Shape("utterance has no sources".into()));
        }
        let mix_spec = stft.analyze(&mixture)?;
        let source_mags = sources
            .iter()
            .map(|s| Ok(stft.analyze(s)?.magnitude))
            .collect::<Result<Vec<_>, ModelError>>()?;
        if source_mags.iter().any(|m| m.len() != mix_spec.magnitude.len()) {
            return Err(ModelError::Shape("source and mixture lengths differ".into()));
        }
        Ok(Self {
            mixture,
            sources,
            mix_spec,
            source_mags,
        })
    }

    pub fn k(&self) -> usize {
        self.sources.len()
    }

    pub fn from_generated(g: &GeneratedMixture, stft: &StftConfig) -> Result<Self, ModelError> {
        Self::new(g.mixture.mixture.clone(), g.mixture.sources.clone(), stft)
    }

    pub fn from_record(r: &MixtureRecord, stft: &StftConfig) -> Result<Self, ModelError> {
        let (mix, sources) = r.load()?;
        Self::new(mix, sources, stft)
    }
}

/// Loads every manifest row, in order.
pub fn load_utterances(manifest: &Path, stft: &StftConfig) -> Result<Vec<Utterance>, ModelError> {
    let rows = crate::data::read_manifest(manifest)?;
    rows.par_iter().map(|r| Utterance::from_record(r, stft)).collect()
}

/// Loss, parameter gradients and (danet head) attractors of one utterance.
pub struct UtteranceGrad {
    pub loss: f64,
    pub grads: Vec<Vec<f64>>,
    pub attractors: Option<AttractorSet>,
}

/// Forward pass plus loss for one utterance on a fresh tape.
pub fn utterance_loss(
    net: &EmbeddingNetwork,
    utt: &Utterance,
    cfg: &TrainConfig,
    cluster_seed: u64,
) -> Result<(Tape, crate::diffcore::Var, super::network::Bound, Option<AttractorSet>), ModelError> {
    let k = utt.k();
    if cfg.k != 0 && cfg.k != k {
        return Err(ModelError::Config(format!("training k = {} but mixture has {k} sources", cfg.k)));
    }
    let mut tape = Tape::new();
    let bound = net.bind(&mut tape);
    let v = net.embed(&mut tape, &bound, &utt.mix_spec)?;
    let mix = &utt.mix_spec.magnitude;
    let srcs: Vec<&[f64]> = utt.source_mags.iter().map(Vec::as_slice).collect();
    let (loss, attractors) = match cfg.head {
        LossHead::Danet => {
            let e = energy_topfrac_indicator(&utt.mix_spec, cfg.energy_fraction)?;
            let ind = DominanceIndicators::new(dominance(&srcs)?, e)?;
            let a = ground_truth_attractors(&mut tape, v, &ind)?;
            let m = danet_masks(&mut tape, v, a)?;
            let loss = mse_loss(&mut tape, m, mix, &srcs)?;
            let set = AttractorSet::new(tape.value(a).clone(), Provenance::GroundTruth)?;
            (loss, Some(set))
        }
        LossHead::KmeansDanet => {
            let w: Vec<f64> = mix.iter().map(|x| x * x).collect();
            let out = unfolded_kmeans_layer(&mut tape, v, &w, &cfg.cluster_config(k, cluster_seed))?;
            let m = kmeans_masks(&mut tape, v, out.centroids, cfg.metric, cfg.temperature)?;
            (pit_loss(&mut tape, m, mix, &srcs)?.0, None)
        }
    };
    Ok((tape, loss, bound, attractors))
}

pub fn utterance_gradients(
    net: &EmbeddingNetwork,
    utt: &Utterance,
    cfg: &TrainConfig,
    cluster_seed: u64,
) -> Result<UtteranceGrad, ModelError> {
    let (tape, loss, bound, attractors) = utterance_loss(net, utt, cfg, cluster_seed)?;
    let g = tape.backward(loss)?;
    Ok(UtteranceGrad {
        loss: tape.value(loss).data()[0],
        grads: bound.vars.iter().map(|&p| g.tensor(p).into_data()).collect(),
        attractors,
    })
}

/// k-means initialization seed for an utterance in an epoch.
pub fn cluster_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((epoch as u64) << 32) ^ index as u64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    /// One-based epoch number.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_si_sdri: f64,
    pub lr: f64,
    /// Utterances skipped because an attractor had no support.
    pub skipped: usize,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub log: Vec<EpochLog>,
    /// Ground-truth attractors of the final epoch (danet head only).
    pub attractor_history: Vec<AttractorSet>,
}

/// Writes `epoch,train_loss,val_si_sdri,lr`.
pub fn write_metrics_csv(path: &Path, log: &[EpochLog]) -> Result<(), ModelError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))?;
    let io = |e: csv::Error| ModelError::Io(format!("{}: {e}", path.display()));
    w.write_record(["epoch", "train_loss", "val_si_sdri", "lr"]).map_err(io)?;
    for r in log {
        w.write_record([
            r.epoch.to_string(),
            format!("{:.8}", r.train_loss),
            format!("{:.4}", r.val_si_sdri),
            format!("{:e}", r.lr),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))
}

/// Mean SI-SDRi over utterances using `opts` for separation.
pub fn evaluate(model: &Model, data: &[Utterance], opts: &SeparateOptions) -> Result<Vec<f64>, ModelError> {
    data.par_iter()
        .map(|u| {
            let k = if opts.k == 0 { u.k() } else { opts.k };
            let o = SeparateOptions { k, ..opts.clone() };
            let sep = separate_spectrogram(model, &u.mix_spec, &o)?;
            let outs: Vec<Waveform> = sep.estimates.iter().map(istft).collect();
            let est: Vec<&[f64]> = outs.iter().map(|w| w.samples.as_slice()).collect();
            let tgt: Vec<&[f64]> = u.sources.iter().map(|w| w.samples.as_slice()).collect();
            Ok(si_sdri(&est, &tgt, &u.mixture.samples)?.mean_si_sdri())
        })
        .collect()
}

/// Validation strategy matching the training head.
pub fn default_strategy(cfg: &TrainConfig) -> Strategy {
    match (cfg.head, cfg.metric) {
        (LossHead::KmeansDanet, _) => Strategy::Unfolded,
        (LossHead::Danet, Metric::Euclidean) => Strategy::KmeansEuclidean,
        (LossHead::Danet, Metric::Spherical) => Strategy::KmeansSpherical,
    }
}

/// Trains `model.net` in place; `on_epoch` sees every epoch's log line.
pub fn train(
    model: &mut Model,
    train_set: &[Utterance],
    val_set: &[Utterance],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainReport, ModelError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(ModelError::Config("training set is empty".into()));
    }
    model.head = cfg.head;
    model.metric = cfg.metric;
    model.temperature = cfg.temperature;
    model.final_uniform = cfg.final_uniform;
    let mut opt = Adam::new(model.net.params());
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr.rate(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0xD1B5_4A32_D192_ED03));
        order.shuffle(&mut rng);
        let last = epoch + 1 == cfg.epochs;
        let (mut loss_sum, mut counted, mut skipped) = (0.0, 0usize, 0usize);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let net = &model.net;
            let results: Vec<Result<UtteranceGrad, ModelError>> = batch
                .par_iter()
                .map(|&i| utterance_gradients(net, &train_set[i], cfg, cluster_seed(cfg.seed, epoch, i)))
                .collect();
            let mut acc: Vec<Vec<f64>> = net.params().iter().map(|p| vec![0.0; p.len()]).collect();
            let mut used = 0usize;
            for r in results {
                let g = match r {
                    Ok(g) => g,
                    Err(ModelError::DegenerateBatch(_)) => {
                        skipped += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                if !g.loss.is_finite() || g.grads.iter().flatten().any(|x| !x.is_finite()) {
                    return Err(ModelError::NonFinite(format!(
                        "loss {} in epoch {}, batch {}",
                        g.loss,
                        epoch + 1,
                        b + 1
                    )));
                }
                for (a, gi) in acc.iter_mut().zip(&g.grads) {
                    for (x, y) in a.iter_mut().zip(gi) {
                        *x += y;
                    }
                }
                if last {
                    if let Some(a) = g.attractors {
                        history.push(a);
                    }
                }
                loss_sum += g.loss;
                used += 1;
            }
            if used == 0 {
                continue;
            }
            counted += used;
            let inv = 1.0 / used as f64;
            let mut norm = 0.0;
            for a in acc.iter_mut() {
                for x in a.iter_mut() {
                    *x *= inv;
                    norm += *x * *x;
                }
            }
            let norm = norm.sqrt();
            if cfg.grad_clip > 0.0 && norm > cfg.grad_clip {
                let s = cfg.grad_clip / norm;
                acc.iter_mut().flatten().for_each(|x| *x *= s);
            }
            opt.step(model.net.params_mut(), &acc, lr);
        }
        let train_loss = if counted > 0 { loss_sum / counted as f64 } else { f64::NAN };
        let val_si_sdri = if val_set.is_empty() {
            f64::NAN
        } else {
            let opts = SeparateOptions {
                k: 0,
                strategy: default_strategy(cfg),
                iterations: cfg.val_iterations,
                seed: cfg.seed,
                ..Default::default()
            };
            let scores = evaluate(model, val_set, &opts)?;
            scores.iter().sum::<f64>() / scores.len() as f64
        };
        let entry = EpochLog {
            epoch: epoch + 1,
            train_loss,
            val_si_sdri,
            lr,
            skipped,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(TrainReport {
        log,
        attractor_history: history,
    })
}
