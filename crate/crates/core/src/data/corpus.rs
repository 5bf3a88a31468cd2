use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::synth::{synthesize_source, SourceFamily, SourceParams, IDENTITIES};
use super::{mix, DataError, Mixture};
use crate::dsp::{read_wav, write_wav, WavFormat, Waveform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Allowed source counts; each record draws one uniformly.
    pub k_set: Vec<usize>,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub source_family: SourceFamily,
    pub seed: u64,
    /// Relative source levels are drawn uniformly from ±this many dB.
    pub snr_range_db: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_train: 200,
            n_val: 20,
            n_test: 50,
            k_set: vec![2],
            duration_s: 1.0,
            sample_rate: 8000,
            source_family: SourceFamily::Harmonic,
            seed: 0,
            snr_range_db: 5.0,
        }
    }
}

/// Records per split are bounded so seed ranges never overlap.
const SPLIT_STRIDE: u64 = 1 << 28;

/// Seed of record `index` in `split`: `seed·2³² + split·2²⁸ + index`.
pub fn record_seed(base: u64, split: Split, index: usize) -> u64 {
    (base << 32) + split.tag() * SPLIT_STRIDE + index as u64
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::InvalidSpec(m.to_string()));
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return bad("split sizes must be positive");
        }
        if self.k_set.is_empty() || self.k_set.iter().any(|&k| k == 0 || k > 3) {
            return bad("k_set must contain source counts in 1..=3");
        }
        if !(self.duration_s > 0.0) {
            return bad("duration must be positive");
        }
        if self.sample_rate == 0 {
            return bad("sample rate must be positive");
        }
        if !(self.snr_range_db >= 0.0) {
            return bad("snr range must be non-negative");
        }
        if self.seed >= 1 << 32 {
            return bad("seed must fit in 32 bits");
        }
        for split in Split::ALL {
            if self.count(split) as u64 >= SPLIT_STRIDE {
                return bad("split too large");
            }
        }
        Ok(())
    }

    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.n_train,
            Split::Val => self.n_val,
            Split::Test => self.n_test,
        }
    }

    pub fn max_k(&self) -> usize {
        self.k_set.iter().copied().max().unwrap_or(0)
    }

    /// Half-open seed range used by a split.
    pub fn seed_range(&self, split: Split) -> (u64, u64) {
        let start = record_seed(self.seed, split, 0);
        (start, start + self.count(split) as u64)
    }
}

/// One synthesized record, held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedMixture {
    pub mixture: Mixture,
    pub k: usize,
    /// Level of source 1 relative to source 2 in dB.
    pub snr_db: f64,
    pub seed: u64,
}

pub fn generate_record(spec: &CorpusSpec, split: Split, index: usize) -> Result<GeneratedMixture, DataError> {
    let seed = record_seed(spec.seed, split, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = spec.k_set[rng.gen_range(0..spec.k_set.len())];
    let identities = sample(&mut rng, IDENTITIES, k).into_vec();
    let sources: Vec<Waveform> = identities
        .iter()
        .map(|&identity| {
            let s = rng.gen::<u64>();
            synthesize_source(spec.source_family, SourceParams { identity }, spec.duration_s, spec.sample_rate, s)
        })
        .collect();
    let r = spec.snr_range_db;
    let snr_db = if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 };
    let mut offsets = vec![0.0; k];
    offsets[0] = snr_db;
    for o in offsets.iter_mut().skip(2) {
        *o = if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 };
    }
    Ok(GeneratedMixture {
        mixture: mix(&sources, &offsets)?,
        k,
        snr_db,
        seed,
    })
}

/// Every record of a split, in index order.
pub fn generate_split(spec: &CorpusSpec, split: Split) -> Result<Vec<GeneratedMixture>, DataError> {
    spec.validate()?;
    (0..spec.count(split))
        .into_par_iter()
        .map(|i| generate_record(spec, split, i))
        .collect()
}

/// Manifest row with paths resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureRecord {
    pub mixture_path: PathBuf,
    pub source_paths: Vec<PathBuf>,
    pub snr_db: f64,
    pub k: usize,
}

impl MixtureRecord {
    /// Loads the mixture and its sources, trimmed to a common length.
    pub fn load(&self) -> Result<(Waveform, Vec<Waveform>), DataError> {
        let mut mixture = read_wav(&self.mixture_path)?;
        let mut sources = self
            .source_paths
            .iter()
            .map(read_wav)
            .collect::<Result<Vec<_>, _>>()?;
        let n = sources.iter().map(Waveform::len).fold(mixture.len(), usize::min);
        mixture.samples.truncate(n);
        for s in &mut sources {
            s.samples.truncate(n);
        }
        Ok((mixture, sources))
    }
}

#[derive(Debug, Clone)]
pub struct CorpusManifests {
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> DataError + '_ {
    move |source| DataError::Csv {
        path: path.display().to_string(),
        source,
    }
}

/// Writes WAV files and `train.csv`, `val.csv`, `test.csv` manifests under
/// `out_dir`, plus `corpus.txt` recording the spec and per-split seed ranges.
pub fn build_corpus(spec: &CorpusSpec, out_dir: &Path) -> Result<CorpusManifests, DataError> {
    spec.validate()?;
    let max_k = spec.max_k();
    let mut manifest_paths = Vec::new();
    for split in Split::ALL {
        let dir = out_dir.join(split.name());
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let rows = (0..spec.count(split))
            .into_par_iter()
            .map(|i| {
                let rec = generate_record(spec, split, i)?;
                let stem = format!("{:05}", i);
                let mix_rel = format!("{}/{stem}_mix.wav", split.name());
                write_wav(out_dir.join(&mix_rel), &rec.mixture.mixture, WavFormat::Float32)?;
                let mut srcs = Vec::new();
                for (l, s) in rec.mixture.sources.iter().enumerate() {
                    let rel = format!("{}/{stem}_s{}.wav", split.name(), l + 1);
                    write_wav(out_dir.join(&rel), s, WavFormat::Float32)?;
                    srcs.push(rel);
                }
                Ok((mix_rel, srcs, rec.k, rec.snr_db))
            })
            .collect::<Result<Vec<_>, DataError>>()?;
        let path = out_dir.join(format!("{}.csv", split.name()));
        let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
        let mut header = vec!["mix".to_string()];
        header.extend((1..=max_k).map(|l| format!("src{l}")));
        header.extend(["k".to_string(), "snr_db".to_string()]);
        w.write_record(&header).map_err(csv_err(&path))?;
        for (mix_rel, srcs, k, snr) in rows {
            let mut row = vec![mix_rel];
            row.extend((0..max_k).map(|l| srcs.get(l).cloned().unwrap_or_default()));
            row.push(k.to_string());
            row.push(format!("{snr:.6}"));
            w.write_record(&row).map_err(csv_err(&path))?;
        }
        w.flush().map_err(io_err(&path))?;
        manifest_paths.push(path);
    }
    let info = out_dir.join("corpus.txt");
    let mut text = String::new();
    text.push_str(&format!("family={}\n", spec.source_family));
    text.push_str(&format!("duration_s={}\n", spec.duration_s));
    text.push_str(&format!("sample_rate={}\n", spec.sample_rate));
    text.push_str(&format!(
        "k_set={}\n",
        spec.k_set.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(",")
    ));
    text.push_str(&format!("seed={}\n", spec.seed));
    text.push_str(&format!("snr_range_db={}\n", spec.snr_range_db));
    for split in Split::ALL {
        let (a, b) = spec.seed_range(split);
        text.push_str(&format!("{}_seeds={a}..{b}\n", split.name()));
    }
    fs::write(&info, text).map_err(io_err(&info))?;
    let mut it = manifest_paths.into_iter();
    Ok(CorpusManifests {
        train: it.next().expect("train"),
        val: it.next().expect("val"),
        test: it.next().expect("test"),
    })
}

/// Parses a `mix,src1,src2[,src3],k,snr_db` manifest.
pub fn read_manifest(path: &Path) -> Result<Vec<MixtureRecord>, DataError> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let headers = rdr.headers().map_err(csv_err(path))?.clone();
    let bad = |msg: String| DataError::Manifest {
        path: path.display().to_string(),
        msg,
    };
    let col = |name: &str| headers.iter().position(|h| h == name);
    let mix_col = col("mix").ok_or_else(|| bad("missing 'mix' column".into()))?;
    let k_col = col("k").ok_or_else(|| bad("missing 'k' column".into()))?;
    let snr_col = col("snr_db").ok_or_else(|| bad("missing 'snr_db' column".into()))?;
    let src_cols: Vec<usize> = (1..).map_while(|l| col(&format!("src{l}"))).collect();
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let field = |c: usize| rec.get(c).unwrap_or("").trim();
        let k: usize = field(k_col)
            .parse()
            .map_err(|_| bad(format!("row {}: bad k '{}'", line + 1, field(k_col))))?;
        let snr_db: f64 = field(snr_col)
            .parse()
            .map_err(|_| bad(format!("row {}: bad snr_db '{}'", line + 1, field(snr_col))))?;
        let sources: Vec<PathBuf> = src_cols
            .iter()
            .map(|&c| field(c))
            .filter(|s| !s.is_empty())
            .map(|s| base.join(s))
            .collect();
        if sources.len() != k {
            return Err(bad(format!("row {}: k = {k} but {} sources", line + 1, sources.len())));
        }
        out.push(MixtureRecord {
            mixture_path: base.join(field(mix_col)),
            source_paths: sources,
            snr_db,
            k,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> CorpusSpec {
        CorpusSpec {
            n_train: 10,
            n_val: 2,
            n_test: 3,
            duration_s: 0.25,
            ..Default::default()
        }
    }

    #[test]
    fn corpus_counts_files_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let m = build_corpus(&small_spec(), dir.path()).unwrap();
        let train = read_manifest(&m.train).unwrap();
        assert_eq!(train.len(), 10);
        let wavs = fs::read_dir(dir.path().join("train")).unwrap().count();
        assert_eq!(wavs, 30);
        for r in &train {
            let (mix, srcs) = r.load().unwrap();
            assert_eq!(srcs.len(), 2);
            for i in 0..mix.len() {
                let s: f64 = srcs.iter().map(|s| s.samples[i]).sum();
                assert!((mix.samples[i] - s).abs() < 1e-12);
            }
        }
        let header = fs::read_to_string(&m.train).unwrap();
        assert!(header.starts_with("mix,src1,src2,k,snr_db\n"));
    }

    #[test]
    fn rebuild_is_byte_identical() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        build_corpus(&small_spec(), a.path()).unwrap();
        build_corpus(&small_spec(), b.path()).unwrap();
        for split in Split::ALL {
            for e in fs::read_dir(a.path().join(split.name())).unwrap() {
                let name = e.unwrap().file_name();
                let x = fs::read(a.path().join(split.name()).join(&name)).unwrap();
                let y = fs::read(b.path().join(split.name()).join(&name)).unwrap();
                assert_eq!(x, y);
            }
        }
        assert_eq!(fs::read(a.path().join("train.csv")).unwrap(), fs::read(b.path().join("train.csv")).unwrap());
    }

    #[test]
    fn mixed_k_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let spec = CorpusSpec {
            k_set: vec![2, 3],
            ..small_spec()
        };
        let m = build_corpus(&spec, dir.path()).unwrap();
        let rows = read_manifest(&m.train).unwrap();
        let ks: std::collections::BTreeSet<usize> = rows.iter().map(|r| r.k).collect();
        assert_eq!(ks.into_iter().collect::<Vec<_>>(), vec![2, 3]);
        assert!(fs::read_to_string(&m.train).unwrap().starts_with("mix,src1,src2,src3,k,snr_db\n"));
    }

    #[test]
    fn split_seed_ranges_are_disjoint() {
        let spec = small_spec();
        let ranges: Vec<(u64, u64)> = Split::ALL.iter().map(|&s| spec.seed_range(s)).collect();
        for i in 0..3 {
            for j in i + 1..3 {
                assert!(ranges[i].1 <= ranges[j].0 || ranges[j].1 <= ranges[i].0);
            }
        }
        let other = CorpusSpec { seed: 1, ..spec.clone() };
        assert!(other.seed_range(Split::Train).0 >= spec.seed_range(Split::Test).1);
    }

    #[test]
    fn invalid_spec_rejected() {
        assert!(CorpusSpec { n_train: 0, ..small_spec() }.validate().is_err());
        assert!(CorpusSpec { k_set: vec![4], ..small_spec() }.validate().is_err());
    }
}
