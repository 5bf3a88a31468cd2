use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dsp::Waveform;

/// Number of distinct synthetic "speaker identities" per family.
pub const IDENTITIES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SourceFamily {
    /// Band-limited noise with a slow amplitude envelope; each identity owns a band.
    AmNoise,
    /// Harmonic stacks with vibrato and syllable-like on/off envelopes.
    #[default]
    Harmonic,
    /// Linear chirps with a second harmonic.
    Chirp,
}

impl std::str::FromStr for SourceFamily {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "am_noise" | "am-noise" => Ok(Self::AmNoise),
            "harmonic" => Ok(Self::Harmonic),
            "chirp" => Ok(Self::Chirp),
            _ => Err(format!("unknown source family '{s}' (am_noise|harmonic|chirp)")),
        }
    }
}

impl std::fmt::Display for SourceFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::AmNoise => "am_noise",
            Self::Harmonic => "harmonic",
            Self::Chirp => "chirp",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceParams {
    /// Identity in `0..IDENTITIES`; sources of one mixture use distinct identities.
    pub identity: usize,
}

/// Frequency band (Hz) owned by an identity of the band-limited noise family.
pub fn noise_band(identity: usize) -> (f64, f64) {
    let lo = 150.0 + 440.0 * (identity % IDENTITIES) as f64;
    (lo, lo + 300.0)
}

/// Fundamental frequency range centre for the harmonic family.
pub fn harmonic_f0(identity: usize) -> f64 {
    100.0 * 3.5f64.powf((identity % IDENTITIES) as f64 / (IDENTITIES - 1) as f64)
}

/// Deterministic source waveform for a family, identity and seed.
pub fn synthesize_source(family: SourceFamily, params: SourceParams, duration_s: f64, rate: u32, seed: u64) -> Waveform {
    let n = (duration_s * rate as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = rate as f64;
    let samples = match family {
        SourceFamily::AmNoise => {
            let (lo, hi) = noise_band(params.identity);
            let mut x = band_noise(n, fs, lo, hi, &mut rng);
            let fm = rng.gen_range(2.0..5.0);
            let phi = rng.gen_range(0.0..2.0 * PI);
            for (i, v) in x.iter_mut().enumerate() {
                *v *= 0.5 * (1.0 + 0.8 * (2.0 * PI * fm * i as f64 / fs + phi).sin());
            }
            x
        }
        SourceFamily::Harmonic => {
            let f0 = harmonic_f0(params.identity) * rng.gen_range(0.97..1.03);
            let vib_rate = rng.gen_range(4.0..6.0);
            let vib_depth = rng.gen_range(0.01..0.02);
            let n_harm = ((0.95 * fs / 2.0) / (f0 * (1.0 + vib_depth))).floor().max(1.0) as usize;
            let phases: Vec<f64> = (0..n_harm).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
            let tilt = rng.gen_range(0.8..1.2);
            let env = syllable_envelope(n, fs, &mut rng);
            let mut phase = 0.0;
            (0..n)
                .map(|i| {
                    let t = i as f64 / fs;
                    let f = f0 * (1.0 + vib_depth * (2.0 * PI * vib_rate * t).sin());
                    phase += 2.0 * PI * f / fs;
                    let s: f64 = (0..n_harm)
                        .map(|h| ((h + 1) as f64).powf(-tilt) * ((h + 1) as f64 * phase + phases[h]).sin())
                        .sum();
                    s * env[i]
                })
                .collect()
        }
        SourceFamily::Chirp => {
            let f_start = 200.0 + 400.0 * (params.identity % IDENTITIES) as f64 + rng.gen_range(-50.0..50.0);
            let span = rng.gen_range(300.0..800.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let f_end = (f_start + span).clamp(100.0, 0.45 * fs);
            let dur = n as f64 / fs;
            let env = syllable_envelope(n, fs, &mut rng);
            (0..n)
                .map(|i| {
                    let t = i as f64 / fs;
                    let ph = 2.0 * PI * (f_start * t + 0.5 * (f_end - f_start) / dur * t * t);
                    let second = if 2.0 * f_start.max(f_end) < 0.5 * fs { 0.5 * (2.0 * ph).sin() } else { 0.0 };
                    (ph.sin() + second) * env[i]
                })
                .collect()
        }
    };
    Waveform {
        samples,
        sample_rate: rate,
    }
}

/// Gaussian noise restricted to `[lo, hi]` Hz by zeroing FFT bins.
fn band_noise(n: usize, fs: f64, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(StandardNormal.sample(rng), 0.0))
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (j, c) in buf.iter_mut().enumerate() {
        let f = j.min(n - j) as f64 * fs / n as f64;
        if f < lo || f > hi {
            *c = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter().map(|c| c.re * scale).collect()
}

/// Alternating on/off segments with 10 ms raised-cosine ramps.
fn syllable_envelope(n: usize, fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut env = vec![0.0; n];
    let ramp = (0.01 * fs) as usize;
    // start mid-syllable or mid-pause
    let mut pos = -(rng.gen_range(0.0..0.2) * fs) as isize;
    let mut on = rng.gen_bool(0.7);
    while pos < n as isize {
        let len = if on { rng.gen_range(0.15..0.4) } else { rng.gen_range(0.04..0.12) };
        let len = (len * fs) as isize;
        if on {
            for j in 0..len {
                let i = pos + j;
                if i < 0 || i >= n as isize {
                    continue;
                }
                let edge = j.min(len - 1 - j) as f64;
                env[i as usize] = if (edge as usize) < ramp {
                    0.5 - 0.5 * (PI * edge / ramp as f64).cos()
                } else {
                    1.0
                };
            }
        }
        pos += len;
        on = !on;
    }
    env
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_samples() {
        for fam in [SourceFamily::AmNoise, SourceFamily::Harmonic, SourceFamily::Chirp] {
            let p = SourceParams { identity: 3 };
            let a = synthesize_source(fam, p, 0.5, 8000, 42);
            let b = synthesize_source(fam, p, 0.5, 8000, 42);
            assert_eq!(a, b);
            let c = synthesize_source(fam, p, 0.5, 8000, 43);
            assert_ne!(a, c);
            assert!(a.samples.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn duration_sets_length() {
        let w = synthesize_source(SourceFamily::Harmonic, SourceParams { identity: 0 }, 2.0, 8000, 1);
        assert_eq!(w.len(), 16000);
    }

    #[test]
    fn band_noise_energy_stays_in_band() {
        for identity in 0..IDENTITIES {
            let w = synthesize_source(SourceFamily::AmNoise, SourceParams { identity }, 1.0, 8000, 9 + identity as u64);
            let n = w.len();
            let mut buf: Vec<Complex<f64>> = w.samples.iter().map(|&v| Complex::new(v, 0.0)).collect();
            FftPlanner::<f64>::new().plan_fft_forward(n).process(&mut buf);
            let (lo, hi) = noise_band(identity);
            let (mut inside, mut total) = (0.0, 0.0);
            for (j, c) in buf.iter().enumerate() {
                let f = j.min(n - j) as f64 * 8000.0 / n as f64;
                let e = c.norm_sqr();
                total += e;
                if f >= lo && f <= hi {
                    inside += e;
                }
            }
            assert!(inside / total >= 0.95, "identity {identity}: {}", inside / total);
        }
    }
}
