use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;

use danet::bench::{bench_means, cluster_bench as run_bench, write_bench_file};
use danet::clustering::{fixed_attractors_from_training, AttractorSet, Metric};
use danet::data::{build_corpus, read_manifest, DataError};
use danet::dsp::{read_wav, write_wav, WavFormat};
use danet::model::{
    self, load_checkpoint, load_utterances, save_checkpoint, write_metrics_csv, EmbeddingNetwork, LossHead, Model,
    ModelError, Strategy,
};

use crate::config::{ConfigError, RunConfig};
use crate::Common;

/// Manifest entries whose files are absent.
#[derive(Debug, thiserror::Error)]
#[error("{} missing file(s):\n  {}", .0.len(), .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join("\n  "))]
pub struct MissingFiles(pub Vec<PathBuf>);

fn model_code(e: &ModelError) -> u8 {
    match e {
        ModelError::Config(_) | ModelError::Unsupported(_) => 2,
        ModelError::Data(d) => data_code(d),
        ModelError::NonFinite(_) => 3,
        ModelError::Mismatch(_) | ModelError::Shape(_) => 4,
        _ => 1,
    }
}

fn data_code(e: &DataError) -> u8 {
    match e {
        DataError::InvalidSpec(_) => 2,
        DataError::Manifest { .. } => 4,
        _ => 1,
    }
}

/// 2 configuration, 3 numeric abort, 4 artifact mismatch, 1 anything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<ModelError>() {
            return model_code(e);
        }
        if let Some(e) = cause.downcast_ref::<DataError>() {
            return data_code(e);
        }
        if cause.downcast_ref::<MissingFiles>().is_some() {
            return 4;
        }
    }
    1
}

fn resolve(common: &Common, flags: &[(&str, Option<String>)]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    cfg.apply_env(std::env::vars())?;
    if let Some(seed) = common.seed {
        cfg.set("seed", seed.to_string())?;
    }
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v.clone())?;
        }
    }
    cfg.apply_overrides(&common.set)?;
    if common.show_config {
        eprint!("{}", cfg.render());
    }
    Ok(cfg)
}

fn opt<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Config echo written next to a results file: `x.csv` gets `x.config`.
fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("config")
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Source counts, e.g. `2` or `2,3` for a mixed corpus.
    #[arg(long)]
    pub k: Option<String>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_val: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    /// Mixture length in seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    /// am_noise | harmonic | chirp
    #[arg(long)]
    pub family: Option<String>,
}

pub fn gen_data(a: GenDataArgs) -> Result<()> {
    let cfg = resolve(
        &a.common,
        &[
            ("data.k", a.k.clone()),
            ("data.n_train", opt(&a.n_train)),
            ("data.n_val", opt(&a.n_val)),
            ("data.n_test", opt(&a.n_test)),
            ("data.duration_s", opt(&a.duration)),
            ("data.family", a.family.clone()),
        ],
    )?;
    let spec = cfg.corpus_spec()?;
    spec.validate()?;
    create_dir(&a.out)?;
    let m = build_corpus(&spec, &a.out)?;
    cfg.write_resolved(&a.out.join("config.resolved"))?;
    for p in [&m.train, &m.val, &m.test] {
        println!("{}", p.display());
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Corpus directory holding `train.csv` and optionally `val.csv`.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Training manifest (overrides `--corpus`).
    #[arg(long)]
    pub train_manifest: Option<PathBuf>,
    /// Validation manifest (overrides `--corpus`).
    #[arg(long)]
    pub val_manifest: Option<PathBuf>,
    /// Run directory for the checkpoint, metrics and config echo.
    #[arg(long)]
    pub out: PathBuf,
    /// danet | kmeans-danet
    #[arg(long)]
    pub head: Option<String>,
    /// euclidean | spherical
    #[arg(long)]
    pub metric: Option<String>,
    /// Unrolled k-means iterations L.
    #[arg(long)]
    pub unfold: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Embedding dimension D.
    #[arg(long)]
    pub dim: Option<usize>,
}

fn write_attractor_history(path: &Path, history: &[AttractorSet]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| path.display().to_string())?;
    let d = history.first().map_or(0, AttractorSet::dim);
    let mut header = vec!["entry".to_string(), "attractor".to_string()];
    header.extend((1..=d).map(|j| format!("d{j}")));
    w.write_record(&header)?;
    for (i, a) in history.iter().enumerate() {
        for l in 0..a.k() {
            let mut row = vec![i.to_string(), l.to_string()];
            row.extend(a.vectors.row_slice(l).iter().map(|v| format!("{v:.9}")));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let cfg = resolve(
        &a.common,
        &[
            ("train.head", a.head.clone()),
            ("train.metric", a.metric.clone()),
            ("train.unfold", opt(&a.unfold)),
            ("train.epochs", opt(&a.epochs)),
            ("train.batch_size", opt(&a.batch_size)),
            ("train.lr", opt(&a.lr)),
            ("net.dim", opt(&a.dim)),
        ],
    )?;
    let tc = cfg.train()?;
    tc.validate()?;
    let stft = cfg.stft()?;
    let net_cfg = cfg.network(stft.bins()?)?;
    net_cfg.validate()?;

    let train_manifest = match (&a.train_manifest, &a.corpus) {
        (Some(p), _) => p.clone(),
        (None, Some(dir)) => dir.join("train.csv"),
        (None, None) => bail!(ConfigError::Value {
            key: "--corpus".into(),
            value: String::new(),
            msg: "either --corpus or --train-manifest is required".into(),
        }),
    };
    let val_manifest = a
        .val_manifest
        .clone()
        .or_else(|| a.corpus.as_ref().map(|d| d.join("val.csv")).filter(|p| p.exists()));
    let train_set = load_utterances(&train_manifest, &stft)?;
    let val_set = match &val_manifest {
        Some(p) => load_utterances(p, &stft)?,
        None => Vec::new(),
    };

    create_dir(&a.out)?;
    cfg.write_resolved(&a.out.join("config.resolved"))?;
    let mut m = Model::new(EmbeddingNetwork::new(net_cfg, tc.seed)?, stft);
    eprintln!(
        "training {} ({} weights) on {} mixtures, {} validation",
        tc.head,
        m.net.num_weights(),
        train_set.len(),
        val_set.len()
    );
    let report = model::train(&mut m, &train_set, &val_set, &tc, |e| {
        eprintln!(
            "epoch {:>4}  loss {:.6}  val SI-SDRi {:7.3} dB  lr {:.2e}{}",
            e.epoch,
            e.train_loss,
            e.val_si_sdri,
            e.lr,
            if e.skipped > 0 { format!("  skipped {}", e.skipped) } else { String::new() }
        )
    })?;
    write_metrics_csv(&a.out.join("metrics.csv"), &report.log)?;
    if tc.head == LossHead::Danet && !report.attractor_history.is_empty() {
        write_attractor_history(&a.out.join("attractor_history.csv"), &report.attractor_history)?;
        let k = if tc.k == 0 { 2 } else { tc.k };
        m.fixed = Some(fixed_attractors_from_training(&report.attractor_history, k)?);
    }
    let ckpt = a.out.join("model.ckpt");
    save_checkpoint(&ckpt, &m, Some(&tc))?;
    println!("{}", ckpt.display());
    Ok(())
}

/// Strategy a model is evaluated with when none is requested.
fn model_strategy(m: &Model) -> Strategy {
    match (m.head, m.metric) {
        (LossHead::KmeansDanet, _) => Strategy::Unfolded,
        (LossHead::Danet, Metric::Euclidean) => Strategy::KmeansEuclidean,
        (LossHead::Danet, Metric::Spherical) => Strategy::KmeansSpherical,
    }
}

#[derive(Debug, Args)]
pub struct SeparateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Mixture WAV.
    #[arg(long)]
    pub input: PathBuf,
    /// Directory receiving `out_1.wav` .. `out_k.wav`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    /// e1 | e2-euclid | e2-spherical | unfolded (default: from the model)
    #[arg(long)]
    pub strategy: Option<String>,
    /// Clustering iterations.
    #[arg(long)]
    pub iters: Option<usize>,
}

pub fn separate(a: SeparateArgs) -> Result<()> {
    let cfg = resolve(
        &a.common,
        &[
            ("separate.k", opt(&a.k)),
            ("separate.strategy", a.strategy.clone()),
            ("separate.iterations", opt(&a.iters)),
        ],
    )?;
    let (mut opts, strategy) = cfg.separate()?;
    let (m, _) = load_checkpoint(&a.checkpoint)?;
    opts.strategy = strategy.unwrap_or_else(|| model_strategy(&m));
    let mix = read_wav(&a.input)?;
    let sep = model::separate(&m, &mix, &opts)?;
    create_dir(&a.out)?;
    cfg.write_resolved(&a.out.join("config.resolved"))?;
    for (l, w) in sep.waveforms.iter().enumerate() {
        let p = a.out.join(format!("out_{}.wav", l + 1));
        write_wav(&p, w, WavFormat::Float32)?;
        println!("{}", p.display());
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Manifest CSV (e.g. `corpus/test.csv`).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Results CSV; the resolved config is written beside it.
    #[arg(long)]
    pub out: PathBuf,
    /// Shorthand for `--strategy e2-euclid` / `--strategy e2-spherical`.
    #[arg(long, conflicts_with = "strategy")]
    pub metric: Option<String>,
    /// e1 | e2-euclid | e2-spherical | unfolded (default: from the model)
    #[arg(long)]
    pub strategy: Option<String>,
    /// Sources to extract; 0 uses each mixture's own count.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    /// Comma-separated clustering iteration counts, one summary row each.
    #[arg(long, value_delimiter = ',')]
    pub unfold_sweep: Vec<usize>,
}

fn check_files(manifest: &Path) -> Result<()> {
    let records = read_manifest(manifest)?;
    let missing: Vec<PathBuf> = records
        .iter()
        .flat_map(|r| std::iter::once(&r.mixture_path).chain(&r.source_paths))
        .filter(|p| !p.exists())
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(MissingFiles(missing).into());
    }
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let strategy = match &a.metric {
        Some(m) => Some(match m.parse::<Metric>().map_err(|msg| ConfigError::Value {
            key: "--metric".into(),
            value: m.clone(),
            msg,
        })? {
            Metric::Euclidean => Strategy::KmeansEuclidean.to_string(),
            Metric::Spherical => Strategy::KmeansSpherical.to_string(),
        }),
        None => a.strategy.clone(),
    };
    let cfg = resolve(
        &a.common,
        &[
            ("separate.strategy", strategy),
            ("separate.iterations", opt(&a.iters)),
            ("evaluate.k", opt(&a.k)),
        ],
    )?;
    let (mut opts, strategy) = cfg.separate()?;
    opts.k = cfg.get("evaluate.k")?;
    let (m, _) = load_checkpoint(&a.checkpoint)?;
    opts.strategy = strategy.unwrap_or_else(|| model_strategy(&m));
    check_files(&a.manifest)?;
    let records = read_manifest(&a.manifest)?;
    let data = load_utterances(&a.manifest, &m.stft)?;
    let sweep = if a.unfold_sweep.is_empty() {
        vec![opts.iterations]
    } else {
        a.unfold_sweep.clone()
    };
    if sweep.contains(&0) {
        bail!(ConfigError::Value {
            key: "--unfold-sweep".into(),
            value: "0".into(),
            msg: "iteration counts must be positive".into(),
        });
    }

    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let mut w = csv::Writer::from_path(&a.out).with_context(|| a.out.display().to_string())?;
    w.write_record(["utterance", "mixture", "k", "strategy", "iterations", "si_sdri"])?;
    let mut means = Vec::with_capacity(sweep.len());
    for &iters in &sweep {
        let o = model::SeparateOptions {
            iterations: iters,
            ..opts.clone()
        };
        let scores = model::evaluate(&m, &data, &o)?;
        for (i, (s, r)) in scores.iter().zip(&records).enumerate() {
            let k = if o.k == 0 { r.k } else { o.k };
            w.write_record([
                i.to_string(),
                r.mixture_path.display().to_string(),
                k.to_string(),
                o.strategy.to_string(),
                iters.to_string(),
                format!("{s:.6}"),
            ])?;
        }
        let mean = scores.iter().sum::<f64>() / scores.len().max(1) as f64;
        means.push((iters, mean));
    }
    for (iters, mean) in &means {
        w.write_record([
            "mean".to_string(),
            String::new(),
            String::new(),
            opts.strategy.to_string(),
            iters.to_string(),
            format!("{mean:.6}"),
        ])?;
        println!("{} L={iters}: mean SI-SDRi {mean:.3} dB over {} mixtures", opts.strategy, data.len());
    }
    w.flush()?;
    cfg.write_resolved(&sidecar(&a.out))?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    /// Results CSV; the resolved config is written beside it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub instances: Option<usize>,
    /// rays | balls
    #[arg(long)]
    pub shape: Option<String>,
    #[arg(long)]
    pub spread: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
}

pub fn cluster_bench(a: BenchArgs) -> Result<()> {
    let cfg = resolve(
        &a.common,
        &[
            ("bench.instances", opt(&a.instances)),
            ("bench.shape", a.shape.clone()),
            ("bench.spread", opt(&a.spread)),
            ("bench.k", opt(&a.k)),
            ("bench.dim", opt(&a.dim)),
        ],
    )?;
    let bc = cfg.bench()?;
    let rows = run_bench(&bc).map_err(|e| ConfigError::Value {
        key: "bench".into(),
        value: String::new(),
        msg: e.to_string(),
    })?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_bench_file(&a.out, &rows).with_context(|| a.out.display().to_string())?;
    cfg.write_resolved(&sidecar(&a.out))?;
    for metric in [Metric::Euclidean, Metric::Spherical] {
        let (c, e) = bench_means(&rows, metric);
        println!("{metric:>9}: cosine error {c:.6}, euclidean error {e:.6}");
    }
    Ok(())
}
