use std::path::Path;

use hound::{SampleFormat, WavSpec, WavWriter};

use super::{DspError, Waveform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WavFormat {
    #[default]
    Float32,
    Pcm16,
}

fn wav_err(path: &Path) -> impl FnOnce(hound::Error) -> DspError + '_ {
    move |source| DspError::Wav {
        path: path.display().to_string(),
        source,
    }
}

/// Reads a mono 16-bit PCM or 32-bit float WAV file.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform, DspError> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(wav_err(path))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(DspError::MultiChannel {
            path: path.display().to_string(),
            channels: spec.channels,
        });
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(wav_err(path))?,
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(wav_err(path))?,
        (fmt, bits) => {
            return Err(DspError::SampleFormat {
                path: path.display().to_string(),
                bits,
                kind: if fmt == SampleFormat::Float { "float" } else { "int" },
            })
        }
    };
    Waveform::new(samples, spec.sample_rate)
}

pub fn write_wav(path: impl AsRef<Path>, w: &Waveform, format: WavFormat) -> Result<(), DspError> {
    let path = path.as_ref();
    let spec = match format {
        WavFormat::Float32 => WavSpec {
            channels: 1,
            sample_rate: w.sample_rate,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        },
        WavFormat::Pcm16 => WavSpec {
            channels: 1,
            sample_rate: w.sample_rate,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        },
    };
    let mut writer = WavWriter::create(path, spec).map_err(wav_err(path))?;
    for &s in &w.samples {
        match format {
            WavFormat::Float32 => writer.write_sample(s as f32),
            WavFormat::Pcm16 => writer.write_sample((s * 32768.0).round().clamp(-32768.0, 32767.0) as i16),
        }
        .map_err(wav_err(path))?;
    }
    writer.finalize().map_err(wav_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_and_pcm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let w = Waveform::new(vec![0.5, -0.25, 0.0, 0.125], 8000).unwrap();
        let p = dir.path().join("f.wav");
        write_wav(&p, &w, WavFormat::Float32).unwrap();
        assert_eq!(read_wav(&p).unwrap(), w);

        let p = dir.path().join("i.wav");
        write_wav(&p, &w, WavFormat::Pcm16).unwrap();
        let r = read_wav(&p).unwrap();
        assert_eq!(r.sample_rate, 8000);
        for (a, b) in r.samples.iter().zip(&w.samples) {
            assert!((a - b).abs() < 1.0 / 32768.0);
        }
    }

    #[test]
    fn stereo_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut wr = WavWriter::create(&p, spec).unwrap();
        for _ in 0..4 {
            wr.write_sample(0i16).unwrap();
        }
        wr.finalize().unwrap();
        assert!(matches!(read_wav(&p), Err(DspError::MultiChannel { channels: 2, .. })));
    }
}
