//! Flat `key=value` run configuration.
//!
//! Values are resolved in increasing priority: built-in defaults, a config
//! file, `DANET_*` environment variables, then command-line flags. The
//! environment name of a key is its upper-cased form with `.` replaced by
//! `_`, so `train.epochs` becomes `DANET_TRAIN_EPOCHS`.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use danet::bench::{BenchConfig, ClusterShape};
use danet::clustering::Metric;
use danet::data::{CorpusSpec, SourceFamily};
use danet::model::{
    CellType, InputScaling, LossHead, LrSchedule, MaskRule, NetworkConfig, SeparateOptions, StftConfig, Strategy,
    TrainConfig,
};

pub const ENV_PREFIX: &str = "DANET_";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("unknown environment override {0}")]
    UnknownEnv(String),
    #[error("{origin}: expected key=value, found '{line}'")]
    Syntax { origin: String, line: String },
    #[error("invalid value '{value}' for {key}: {msg}")]
    Value { key: String, value: String, msg: String },
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
}

fn list<T: Display>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn default_entries() -> Vec<(&'static str, String)> {
    let d = CorpusSpec::default();
    let s = StftConfig::default();
    let n = NetworkConfig::default();
    let t = TrainConfig::default();
    let p = SeparateOptions::default();
    let b = BenchConfig::default();
    vec![
        ("seed", "0".into()),
        ("data.n_train", d.n_train.to_string()),
        ("data.n_val", d.n_val.to_string()),
        ("data.n_test", d.n_test.to_string()),
        ("data.k", list(&d.k_set)),
        ("data.duration_s", d.duration_s.to_string()),
        ("data.sample_rate", d.sample_rate.to_string()),
        ("data.family", d.source_family.to_string()),
        ("data.snr_range_db", d.snr_range_db.to_string()),
        ("stft.sample_rate", s.sample_rate.to_string()),
        ("stft.frame_ms", s.frame_ms.to_string()),
        ("stft.overlap", s.overlap.to_string()),
        ("net.hidden", n.hidden.to_string()),
        ("net.layers", n.layers.to_string()),
        ("net.cells", n.cells.to_string()),
        ("net.cell", n.cell.to_string()),
        ("net.dim", n.dim.to_string()),
        ("net.input_scaling", n.input_scaling.to_string()),
        ("train.head", t.head.to_string()),
        ("train.metric", t.metric.to_string()),
        ("train.unfold", t.unfold.to_string()),
        ("train.epochs", t.epochs.to_string()),
        ("train.batch_size", t.batch_size.to_string()),
        ("train.lr", t.lr.base.to_string()),
        ("train.lr_stages", t.lr.format_stages()),
        ("train.k", t.k.to_string()),
        ("train.energy_fraction", t.energy_fraction.to_string()),
        ("train.temperature", t.temperature.to_string()),
        ("train.final_uniform", t.final_uniform.to_string()),
        ("train.grad_clip", t.grad_clip.to_string()),
        ("train.val_iterations", t.val_iterations.to_string()),
        ("separate.k", p.k.to_string()),
        ("separate.strategy", "auto".into()),
        ("separate.iterations", p.iterations.to_string()),
        ("separate.mask_rule", p.mask_rule.to_string()),
        ("separate.cluster_fraction", p.cluster_fraction.to_string()),
        ("evaluate.k", "0".into()),
        ("bench.instances", b.instances.to_string()),
        ("bench.k", b.k.to_string()),
        ("bench.dim", b.dim.to_string()),
        ("bench.points_per_cluster", b.points_per_cluster.to_string()),
        ("bench.shape", b.shape.to_string()),
        ("bench.spread", b.spread.to_string()),
        ("bench.iterations", b.iterations.to_string()),
    ]
}

pub fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.to_ascii_uppercase().replace('.', "_"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: default_entries().into_iter().collect(),
        }
    }
}

impl RunConfig {
    pub fn keys(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.values.keys().copied()
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), ConfigError> {
        let slot = self
            .values
            .get_mut(key)
            .ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
        *slot = value.into().trim().to_string();
        Ok(())
    }

    /// Applies `key=value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), ConfigError> {
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                origin: origin.to_string(),
                line: raw.to_string(),
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.display().to_string(), e))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Applies every `DANET_*` variable; names matching no key are errors.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), ConfigError> {
        let by_env: BTreeMap<String, &'static str> = self.keys().map(|k| (env_name(k), k)).collect();
        for (name, value) in vars {
            if !name.starts_with(ENV_PREFIX) {
                continue;
            }
            let key = by_env.get(&name).ok_or_else(|| ConfigError::UnknownEnv(name.clone()))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    /// Applies `key=value` overrides given on the command line.
    pub fn apply_overrides(&mut self, pairs: &[String]) -> Result<(), ConfigError> {
        for p in pairs {
            self.apply_text(p, "--set")?;
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("known config key")
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: Display,
    {
        let v = self.raw(key);
        v.parse().map_err(|e: T::Err| ConfigError::Value {
            key: key.into(),
            value: v.into(),
            msg: e.to_string(),
        })
    }

    fn get_list(&self, key: &str) -> Result<Vec<usize>, ConfigError> {
        self.raw(key)
            .split(',')
            .map(|s| {
                s.trim().parse().map_err(|e: std::num::ParseIntError| ConfigError::Value {
                    key: key.into(),
                    value: self.raw(key).into(),
                    msg: e.to_string(),
                })
            })
            .collect()
    }

    /// The resolved configuration as `key=value` lines.
    pub fn render(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn write_resolved(&self, path: &Path) -> Result<(), ConfigError> {
        std::fs::write(path, self.render()).map_err(|e| ConfigError::Io(path.display().to_string(), e))
    }

    pub fn seed(&self) -> Result<u64, ConfigError> {
        self.get("seed")
    }

    pub fn corpus_spec(&self) -> Result<CorpusSpec, ConfigError> {
        Ok(CorpusSpec {
            n_train: self.get("data.n_train")?,
            n_val: self.get("data.n_val")?,
            n_test: self.get("data.n_test")?,
            k_set: self.get_list("data.k")?,
            duration_s: self.get("data.duration_s")?,
            sample_rate: self.get("data.sample_rate")?,
            source_family: self.get::<SourceFamily>("data.family")?,
            seed: self.seed()?,
            snr_range_db: self.get("data.snr_range_db")?,
        })
    }

    pub fn stft(&self) -> Result<StftConfig, ConfigError> {
        Ok(StftConfig {
            sample_rate: self.get("stft.sample_rate")?,
            frame_ms: self.get("stft.frame_ms")?,
            overlap: self.get("stft.overlap")?,
        })
    }

    pub fn network(&self, bins: usize) -> Result<NetworkConfig, ConfigError> {
        Ok(NetworkConfig {
            bins,
            hidden: self.get("net.hidden")?,
            layers: self.get("net.layers")?,
            cells: self.get("net.cells")?,
            cell: self.get::<CellType>("net.cell")?,
            dim: self.get("net.dim")?,
            input_scaling: self.get::<InputScaling>("net.input_scaling")?,
        })
    }

    pub fn train(&self) -> Result<TrainConfig, ConfigError> {
        let stages = LrSchedule::parse_stages(self.raw("train.lr_stages")).map_err(|msg| ConfigError::Value {
            key: "train.lr_stages".into(),
            value: self.raw("train.lr_stages").into(),
            msg,
        })?;
        Ok(TrainConfig {
            epochs: self.get("train.epochs")?,
            batch_size: self.get("train.batch_size")?,
            lr: LrSchedule {
                base: self.get("train.lr")?,
                stages,
            },
            unfold: self.get("train.unfold")?,
            metric: self.get::<Metric>("train.metric")?,
            k: self.get("train.k")?,
            seed: self.seed()?,
            head: self.get::<LossHead>("train.head")?,
            energy_fraction: self.get("train.energy_fraction")?,
            temperature: self.get("train.temperature")?,
            final_uniform: self.get("train.final_uniform")?,
            grad_clip: self.get("train.grad_clip")?,
            val_iterations: self.get("train.val_iterations")?,
        })
    }

    /// `None` strategy means "pick from the model".
    pub fn separate(&self) -> Result<(SeparateOptions, Option<Strategy>), ConfigError> {
        let strategy = match self.raw("separate.strategy") {
            "auto" => None,
            _ => Some(self.get::<Strategy>("separate.strategy")?),
        };
        let opts = SeparateOptions {
            k: self.get("separate.k")?,
            strategy: strategy.unwrap_or_default(),
            iterations: self.get("separate.iterations")?,
            mask_rule: self.get::<MaskRule>("separate.mask_rule")?,
            seed: self.seed()?,
            cluster_fraction: self.get("separate.cluster_fraction")?,
        };
        Ok((opts, strategy))
    }

    pub fn bench(&self) -> Result<BenchConfig, ConfigError> {
        Ok(BenchConfig {
            instances: self.get("bench.instances")?,
            k: self.get("bench.k")?,
            dim: self.get("bench.dim")?,
            points_per_cluster: self.get("bench.points_per_cluster")?,
            shape: self.get::<ClusterShape>("bench.shape")?,
            spread: self.get("bench.spread")?,
            iterations: self.get("bench.iterations")?,
            seed: self.seed()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_build_every_section() {
        let c = RunConfig::default();
        assert_eq!(c.corpus_spec().unwrap(), CorpusSpec::default());
        assert_eq!(c.stft().unwrap(), StftConfig::default());
        assert_eq!(c.network(257).unwrap(), NetworkConfig::default());
        assert_eq!(c.train().unwrap(), TrainConfig::default());
        assert_eq!(c.bench().unwrap(), BenchConfig::default());
        let (opts, strategy) = c.separate().unwrap();
        assert_eq!(opts, SeparateOptions::default());
        assert_eq!(strategy, None);
    }

    #[test]
    fn file_then_env_then_flags() {
        let mut c = RunConfig::default();
        c.apply_text("# comment\ntrain.epochs = 7\n\ntrain.unfold=3 # inline\n", "file")
            .unwrap();
        c.apply_env([
            ("DANET_TRAIN_UNFOLD".to_string(), "4".to_string()),
            ("HOME".to_string(), "/x".to_string()),
        ])
        .unwrap();
        c.apply_overrides(&["train.epochs=9".to_string()]).unwrap();
        let t = c.train().unwrap();
        assert_eq!((t.epochs, t.unfold), (9, 4));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut c = RunConfig::default();
        assert!(matches!(c.apply_text("trian.epochs=3", "f"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(
            c.apply_env([("DANET_NOPE".to_string(), "1".to_string())]),
            Err(ConfigError::UnknownEnv(_))
        ));
        assert!(matches!(c.apply_text("no equals sign", "f"), Err(ConfigError::Syntax { .. })));
    }

    #[test]
    fn bad_values_name_the_key() {
        let mut c = RunConfig::default();
        c.set("train.head", "transformer").unwrap();
        let err = c.train().unwrap_err().to_string();
        assert!(err.contains("train.head"), "{err}");
    }

    #[test]
    fn render_round_trips() {
        let mut c = RunConfig::default();
        c.set("data.k", "2,3").unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&c.render(), "echo").unwrap();
        assert_eq!(back, c);
        assert_eq!(back.corpus_spec().unwrap().k_set, vec![2, 3]);
    }
}
