use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{DspError, Spectrogram, Waveform};

/// Frame length and hop in samples for a window of `frame_ms` at `overlap`.
pub fn frame_params(sample_rate: u32, frame_ms: f64, overlap: f64) -> Result<(usize, usize), DspError> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(DspError::InvalidParameter(format!("overlap must be in [0, 1), got {overlap}")));
    }
    let frame = (sample_rate as f64 * frame_ms / 1000.0).round() as usize;
    if frame < 2 || !frame.is_multiple_of(2) {
        return Err(DspError::InvalidParameter(format!(
            "frame length must be even and at least 2 samples, got {frame}"
        )));
    }
    let hop = ((frame as f64) * (1.0 - overlap)).round().max(1.0) as usize;
    Ok((frame, hop))
}

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Hann-windowed STFT with centred frames: the signal is zero-padded by half
/// a frame on both sides, so frame `t` is centred on sample `t·hop`.
pub fn stft(w: &Waveform, frame_ms: f64, overlap: f64) -> Result<Spectrogram, DspError> {
    let (frame_len, hop) = frame_params(w.sample_rate, frame_ms, overlap)?;
    stft_with(w, frame_len, hop)
}

pub(crate) fn stft_with(w: &Waveform, frame_len: usize, hop: usize) -> Result<Spectrogram, DspError> {
    let n = w.samples.len();
    if n < frame_len {
        return Err(DspError::InputTooShort { len: n, frame: frame_len });
    }
    let pad = frame_len / 2;
    let frames = 1 + n.div_ceil(hop);
    let bins = frame_len / 2 + 1;
    let window = hann_window(frame_len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(frame_len);

    let mut magnitude = Vec::with_capacity(frames * bins);
    let mut phase = Vec::with_capacity(frames * bins);
    let mut buf = vec![Complex::new(0.0, 0.0); frame_len];
    for t in 0..frames {
        let start = t * hop;
        for (j, b) in buf.iter_mut().enumerate() {
            let x = (start + j)
                .checked_sub(pad)
                .and_then(|i| w.samples.get(i))
                .copied()
                .unwrap_or(0.0);
            *b = Complex::new(x * window[j], 0.0);
        }
        fft.process(&mut buf);
        for c in &buf[..bins] {
            magnitude.push(c.norm());
            phase.push(c.arg());
        }
    }
    Ok(Spectrogram {
        magnitude,
        phase,
        frames,
        bins,
        frame_len,
        hop,
        sample_rate: w.sample_rate,
        num_samples: n,
    })
}

/// Weighted overlap-add inverse with a Hann synthesis window, normalized by
/// the summed squared window. Every output sample lies under at least two
/// frames, so the normalization stays well away from zero.
pub fn istft(s: &Spectrogram) -> Waveform {
    let (n_fft, hop) = (s.frame_len, s.hop);
    let window = hann_window(n_fft);
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n_fft);
    let total = n_fft + s.frames.saturating_sub(1) * hop;
    let mut out = vec![0.0; total];
    let mut norm = vec![0.0; total];
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    for t in 0..s.frames {
        for f in 0..s.bins {
            let i = t * s.bins + f;
            buf[f] = Complex::from_polar(s.magnitude[i], s.phase[i]);
        }
        // real signal: mirror the conjugate half
        for f in 1..n_fft - s.bins + 1 {
            buf[n_fft - f] = buf[f].conj();
        }
        buf[0].im = 0.0;
        buf[n_fft / 2].im = 0.0;
        ifft.process(&mut buf);
        let start = t * hop;
        for j in 0..n_fft {
            out[start + j] += buf[j].re / n_fft as f64 * window[j];
            norm[start + j] += window[j] * window[j];
        }
    }
    for (o, w) in out.iter_mut().zip(&norm) {
        *o = if *w > 1e-10 { *o / w } else { 0.0 };
    }
    let pad = n_fft / 2;
    let mut samples: Vec<f64> = out.into_iter().skip(pad).take(s.num_samples).collect();
    samples.resize(s.num_samples, 0.0);
    Waveform {
        samples,
        sample_rate: s.sample_rate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_setup_frame_params() {
        assert_eq!(frame_params(8000, 64.0, 0.75).unwrap(), (512, 128));
        let w = Waveform::new(vec![0.0; 4000], 8000).unwrap();
        let s = stft(&w, 64.0, 0.75).unwrap();
        assert_eq!(s.bins, 257);
        assert_eq!((s.frame_len, s.hop), (512, 128));
        assert!(s.magnitude.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn rejects_short_input_and_odd_frames() {
        let w = Waveform::new(vec![0.0; 100], 8000).unwrap();
        assert!(matches!(stft(&w, 64.0, 0.75), Err(DspError::InputTooShort { .. })));
        assert!(frame_params(8000, 0.125, 0.5).is_err());
    }

    #[test]
    fn bin_centred_sinusoid_peaks_at_its_bin() {
        let (n, bin) = (512usize, 37usize);
        let f0 = bin as f64 * 8000.0 / n as f64;
        let x = (0..4000).map(|i| (2.0 * PI * f0 * i as f64 / 8000.0).sin()).collect();
        let s = stft(&Waveform::new(x, 8000).unwrap(), 64.0, 0.75).unwrap();
        // skip the frames that reach into the zero padding
        for t in 2..4000 / 128 - 2 {
            let row = &s.magnitude[t * s.bins..(t + 1) * s.bins];
            let peak = row.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
            assert_eq!(peak, bin, "frame {t}");
        }
    }

    #[test]
    fn round_trip_recovers_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..5000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w = Waveform::new(x.clone(), 8000).unwrap();
        let y = istft(&stft(&w, 64.0, 0.75).unwrap());
        assert_eq!(y.len(), x.len());
        for i in 256..x.len() - 256 {
            assert!((x[i] - y.samples[i]).abs() < 1e-6, "sample {i}");
        }
    }

    #[test]
    fn modified_spectrogram_stays_bounded_at_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..3000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s = stft(&Waveform::new(x, 8000).unwrap(), 64.0, 0.75).unwrap();
        let mag = s.magnitude.iter().map(|m| m * rng.gen_range(0.0..1.0)).collect();
        let y = istft(&s.with_magnitude(mag).unwrap());
        assert!(y.samples.iter().all(|v| v.abs() < 4.0));
    }

    #[test]
    fn round_trip_is_exact_at_the_edges_too() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x: Vec<f64> = (0..1000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = istft(&stft(&Waveform::new(x.clone(), 8000).unwrap(), 64.0, 0.75).unwrap());
        for (a, b) in x.iter().zip(&y.samples) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_and_scaled_spectrograms() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..2048).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s = stft(&Waveform::new(x, 8000).unwrap(), 64.0, 0.75).unwrap();
        let z = s.with_magnitude(vec![0.0; s.magnitude.len()]).unwrap();
        assert!(istft(&z).samples.iter().all(|&v| v == 0.0));

        let base = istft(&s);
        let scaled = istft(&s.with_magnitude(s.magnitude.iter().map(|m| 2.5 * m).collect()).unwrap());
        for (a, b) in base.samples.iter().zip(&scaled.samples) {
            assert!((2.5 * a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn squared_hann_overlap_add_is_constant() {
        let w = hann_window(512);
        let mut acc = vec![0.0; 512 * 8];
        for start in (0..acc.len() - 512).step_by(128) {
            for j in 0..512 {
                acc[start + j] += w[j] * w[j];
            }
        }
        for v in &acc[512..acc.len() - 1024] {
            assert!((v - 1.5).abs() < 1e-10);
        }
    }
}
