use std::f64::consts::PI;

use super::{DspError, Waveform};

/// Zero crossings of the interpolation kernel on each side.
const HALF_TAPS: f64 = 32.0;

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Band-limited resampling with a Hann-windowed sinc kernel.
///
/// The cutoff sits at the lower of the two Nyquist frequencies, and kernel
/// taps are renormalized per output sample so constant signals stay constant
/// up to the edges. Equal rates return the input unchanged.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform, DspError> {
    if target_rate == 0 || w.sample_rate == 0 {
        return Err(DspError::InvalidParameter("sample rates must be positive".into()));
    }
    if target_rate == w.sample_rate {
        return Ok(w.clone());
    }
    let (src, dst) = (w.sample_rate as f64, target_rate as f64);
    let step = src / dst;
    // kernel runs in source-sample units; widen it when decimating
    let cutoff = (dst / src).min(1.0);
    let half_width = HALF_TAPS / cutoff;
    let out_len = (w.samples.len() as u64 * target_rate as u64).div_ceil(w.sample_rate as u64) as usize;
    let n = w.samples.len() as isize;
    let samples = (0..out_len)
        .map(|m| {
            let t = m as f64 * step;
            let lo = ((t - half_width).ceil() as isize).max(0);
            let hi = ((t + half_width).floor() as isize).min(n - 1);
            let (mut acc, mut norm) = (0.0, 0.0);
            for i in lo..=hi {
                let d = t - i as f64;
                let win = 0.5 + 0.5 * (PI * d / half_width).cos();
                let h = cutoff * sinc(cutoff * d) * win;
                acc += h * w.samples[i as usize];
                norm += h;
            }
            if norm.abs() > 1e-12 {
                acc / norm
            } else {
                0.0
            }
        })
        .collect();
    Waveform::new(samples, target_rate)
}
