//! Synthetic mixture corpus: source synthesis, mixing, WAV corpora and CSV
//! manifests.

mod corpus;
mod synth;

pub use corpus::{
    build_corpus, generate_record, generate_split, read_manifest, record_seed, CorpusManifests, CorpusSpec,
    GeneratedMixture, MixtureRecord, Split,
};
pub use synth::{harmonic_f0, noise_band, synthesize_source, SourceFamily, SourceParams, IDENTITIES};

use thiserror::Error;

use crate::dsp::{DspError, Waveform};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid corpus spec: {0}")]
    InvalidSpec(String),
    #[error("sources have different lengths ({0} vs {1})")]
    Length(usize, usize),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: malformed manifest: {msg}")]
    Manifest { path: String, msg: String },
    #[error(transparent)]
    Dsp(#[from] DspError),
}

/// Quantization step for stored samples. Magnitudes stay below 8, so sums of
/// up to three grid values are exact in `f32`.
pub const SAMPLE_GRID: f64 = 1.0 / (1u64 << 20) as f64;

/// Target peak of a mixture.
pub const MIX_PEAK: f64 = 0.9;

/// A mixture and the scaled sources that sum to it exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub mixture: Waveform,
    pub sources: Vec<Waveform>,
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

/// Scales each source to unit RMS times `10^(offset/20)`, sums them, and
/// peak-normalizes the sum to [`MIX_PEAK`] with the same gain applied to the
/// stored sources. Sources are snapped to [`SAMPLE_GRID`] before summing so
/// the mixture is the exact sample-wise sum of the stored sources.
pub fn mix(sources: &[Waveform], offsets_db: &[f64]) -> Result<Mixture, DataError> {
    if sources.is_empty() || sources.len() != offsets_db.len() {
        return Err(DataError::InvalidSpec(format!(
            "{} sources with {} offsets",
            sources.len(),
            offsets_db.len()
        )));
    }
    let n = sources[0].len();
    let rate = sources[0].sample_rate;
    for s in sources {
        if s.len() != n {
            return Err(DataError::Length(n, s.len()));
        }
    }
    let mut scaled: Vec<Vec<f64>> = sources
        .iter()
        .zip(offsets_db)
        .map(|(s, off)| {
            let r = rms(&s.samples);
            let g = if r > 0.0 { 10f64.powf(off / 20.0) / r } else { 0.0 };
            s.samples.iter().map(|v| v * g).collect()
        })
        .collect();
    let peak = (0..n)
        .map(|i| scaled.iter().map(|s| s[i]).sum::<f64>().abs())
        .fold(0.0, f64::max);
    let gain = if peak > 0.0 { MIX_PEAK / peak } else { 1.0 };
    for s in &mut scaled {
        for v in s.iter_mut() {
            *v = (*v * gain / SAMPLE_GRID).round() * SAMPLE_GRID;
        }
    }
    let mixture: Vec<f64> = (0..n).map(|i| scaled.iter().map(|s| s[i]).sum()).collect();
    Ok(Mixture {
        mixture: Waveform {
            samples: mixture,
            sample_rate: rate,
        },
        sources: scaled
            .into_iter()
            .map(|samples| Waveform {
                samples,
                sample_rate: rate,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(f: f64, amp: f64) -> Waveform {
        Waveform {
            samples: (0..800).map(|i| amp * (2.0 * std::f64::consts::PI * f * i as f64 / 8000.0).sin()).collect(),
            sample_rate: 8000,
        }
    }

    #[test]
    fn zero_offset_gives_equal_rms() {
        let m = mix(&[sine(200.0, 0.1), sine(700.0, 3.0)], &[0.0, 0.0]).unwrap();
        let (a, b) = (rms(&m.sources[0].samples), rms(&m.sources[1].samples));
        assert!((a / b - 1.0).abs() < 1e-5);
    }

    #[test]
    fn mixture_is_exact_sum_and_peak_normalized() {
        let m = mix(&[sine(200.0, 0.1), sine(730.0, 3.0), sine(1500.0, 1.0)], &[1.0, -2.0, 4.0]).unwrap();
        for i in 0..800 {
            let s: f64 = m.sources.iter().map(|s| s.samples[i]).sum();
            assert!((m.mixture.samples[i] - s).abs() < 1e-12);
            // the f32 round trip of every stored value is exact
            assert_eq!(m.mixture.samples[i] as f32 as f64, m.mixture.samples[i]);
        }
        let peak = m.mixture.samples.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!((peak - MIX_PEAK).abs() < 1e-5);
    }

    #[test]
    fn offset_sets_rms_ratio() {
        let m = mix(&[sine(200.0, 0.1), sine(730.0, 3.0)], &[5.0, 0.0]).unwrap();
        let ratio = rms(&m.sources[0].samples) / rms(&m.sources[1].samples);
        // grid quantization (2^-20) bounds the deviation
        assert!((ratio - 10f64.powf(5.0 / 20.0)).abs() < 1e-6, "{ratio}");
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let mut b = sine(300.0, 1.0);
        b.samples.pop();
        assert!(matches!(mix(&[sine(200.0, 1.0), b], &[0.0, 0.0]), Err(DataError::Length(..))));
    }
}
