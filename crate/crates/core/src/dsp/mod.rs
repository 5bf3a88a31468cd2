//! Waveform ↔ time-frequency conversion, masking and reconstruction.
//!
//! All TF-indexed vectors use time-major flattening: bin `(t, f)` lives at
//! flat index `t·F + f`.

mod resample;
mod stft;
mod wav;

pub use resample::resample;
pub use stft::{frame_params, hann_window, istft, stft};
pub use wav::{read_wav, write_wav, WavFormat};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("waveform has {len} samples, shorter than one {frame}-sample frame")]
    InputTooShort { len: usize, frame: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape { expected: [usize; 2], got: [usize; 2] },
    #[error("masks do not sum to one at bin {bin} (sum {sum})")]
    MaskSum { bin: usize, sum: f64 },
    #[error("{path}: {channels}-channel audio is not supported, expected mono")]
    MultiChannel { path: String, channels: u16 },
    #[error("{path}: unsupported sample format ({bits}-bit {kind})")]
    SampleFormat { path: String, bits: u16, kind: &'static str },
    #[error("{path}: {source}")]
    Wav {
        path: String,
        #[source]
        source: hound::Error,
    },
}

/// Mono audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, DspError> {
        if sample_rate == 0 {
            return Err(DspError::InvalidParameter("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(DspError::InvalidParameter(format!("non-finite sample at {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Magnitude and phase of a short-time Fourier transform, `frames × bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub magnitude: Vec<f64>,
    pub phase: Vec<f64>,
    pub frames: usize,
    pub bins: usize,
    pub frame_len: usize,
    pub hop: usize,
    pub sample_rate: u32,
    /// Length of the analysed waveform; `istft` trims to it.
    pub num_samples: usize,
}

impl Spectrogram {
    pub fn num_bins(&self) -> usize {
        self.frames * self.bins
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.frames, self.bins]
    }

    pub fn mag(&self, t: usize, f: usize) -> f64 {
        self.magnitude[t * self.bins + f]
    }

    /// Copy with a different magnitude and the same phase/metadata.
    pub fn with_magnitude(&self, magnitude: Vec<f64>) -> Result<Self, DspError> {
        if magnitude.len() != self.magnitude.len() {
            return Err(DspError::Shape {
                expected: self.shape(),
                got: [magnitude.len(), 1],
            });
        }
        Ok(Self {
            magnitude,
            ..self.clone()
        })
    }
}

/// `k` soft masks over a `frames × bins` grid that sum to one per bin.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    frames: usize,
    bins: usize,
    masks: Vec<Vec<f64>>,
}

/// Tolerance of the sum-to-one check.
pub const MASK_SUM_TOL: f64 = 1e-6;

impl MaskSet {
    pub fn new(frames: usize, bins: usize, masks: Vec<Vec<f64>>) -> Result<Self, DspError> {
        let n = frames * bins;
        if masks.is_empty() {
            return Err(DspError::InvalidParameter("mask set is empty".into()));
        }
        for m in &masks {
            if m.len() != n {
                return Err(DspError::Shape {
                    expected: [frames, bins],
                    got: [m.len(), 1],
                });
            }
        }
        for i in 0..n {
            let sum: f64 = masks.iter().map(|m| m[i]).sum();
            if (sum - 1.0).abs() > MASK_SUM_TOL || masks.iter().any(|m| m[i] < 0.0) {
                return Err(DspError::MaskSum { bin: i, sum });
            }
        }
        Ok(Self { frames, bins, masks })
    }

    /// Builds masks from a `TF×k` row-per-bin matrix (the layout softmax emits).
    pub fn from_bin_major(frames: usize, bins: usize, k: usize, data: &[f64]) -> Result<Self, DspError> {
        if data.len() != frames * bins * k {
            return Err(DspError::Shape {
                expected: [frames * bins, k],
                got: [data.len(), 1],
            });
        }
        let masks = (0..k).map(|l| data.iter().skip(l).step_by(k).copied().collect()).collect();
        Self::new(frames, bins, masks)
    }

    pub fn k(&self) -> usize {
        self.masks.len()
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.frames, self.bins]
    }

    pub fn masks(&self) -> &[Vec<f64>] {
        &self.masks
    }

    pub fn mask(&self, l: usize) -> &[f64] {
        &self.masks[l]
    }
}

/// Source estimates `mix ∘ M_l`, each carrying the mixture phase.
pub fn apply_mask(mix: &Spectrogram, masks: &MaskSet) -> Result<Vec<Spectrogram>, DspError> {
    if masks.shape() != mix.shape() {
        return Err(DspError::Shape {
            expected: mix.shape(),
            got: masks.shape(),
        });
    }
    masks
        .masks()
        .iter()
        .map(|m| {
            let mag = mix.magnitude.iter().zip(m).map(|(x, w)| x * w).collect();
            mix.with_magnitude(mag)
        })
        .collect()
}

/// Number of bins kept by a top-`fraction` rule over `n` bins.
pub fn topfrac_count(n: usize, fraction: f64) -> usize {
    // the small slack keeps e.g. 0.9·10 from rounding up to 10
    let c = (fraction * n as f64 - 1e-9).ceil().max(0.0) as usize;
    c.min(n)
}

/// Indicator of the `⌈fraction·TF⌉` bins with the most energy (squared
/// magnitude); ties go to the lower flat index.
pub fn energy_topfrac_indicator(mix: &Spectrogram, fraction: f64) -> Result<Vec<bool>, DspError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DspError::InvalidParameter(format!(
            "energy fraction must be in (0, 1], got {fraction}"
        )));
    }
    let n = mix.magnitude.len();
    let keep = topfrac_count(n, fraction);
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps lower indices first among equal energies
    order.sort_by(|&a, &b| {
        let (ea, eb) = (mix.magnitude[a].powi(2), mix.magnitude[b].powi(2));
        eb.partial_cmp(&ea).unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut out = vec![false; n];
    for &i in &order[..keep] {
        out[i] = true;
    }
    Ok(out)
}
