//! Mono WAV input/output (16-bit PCM or 32-bit float), backed by `hound`.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// On-disk sample encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum WavFormat {
    Pcm16,
    #[default]
    Float32,
}

const PCM16_SCALE: f64 = 32768.0;

fn unsupported(path: &Path, detail: impl Into<String>) -> Error {
    Error::UnsupportedWav {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

/// Reads a mono file; samples are normalized to `[-1, 1]`.
pub fn wav_read<T: Real>(path: impl AsRef<Path>) -> Result<(Vec<T>, u32)> {
    let path = path.as_ref();
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(unsupported(path, format!("{} channels; only mono files are supported", spec.channels)));
    }
    let samples = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| T::lit(f64::from(v) / PCM16_SCALE)))
            .collect::<std::result::Result<Vec<_>, _>>()?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| T::lit(f64::from(v))))
            .collect::<std::result::Result<Vec<_>, _>>()?,
        (format, bits) => {
            return Err(unsupported(
                path,
                format!("{bits}-bit {format:?} samples; expected 16-bit PCM or 32-bit float"),
            ))
        }
    };
    Ok((samples, spec.sample_rate))
}

/// Writes a mono file. 16-bit output clips to the representable range and
/// logs a warning when it does.
pub fn wav_write<T: Real>(path: impl AsRef<Path>, signal: &[T], sample_rate: u32, format: WavFormat) -> Result<()> {
    let path = path.as_ref();
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("WAV samples"));
    }
    let spec = WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: match format {
            WavFormat::Pcm16 => 16,
            WavFormat::Float32 => 32,
        },
        sample_format: match format {
            WavFormat::Pcm16 => SampleFormat::Int,
            WavFormat::Float32 => SampleFormat::Float,
        },
    };
    let mut writer = WavWriter::create(path, spec)?;
    let mut clipped = 0usize;
    match format {
        WavFormat::Pcm16 => {
            for &v in signal {
                let scaled = (v.to_f64_lossy() * PCM16_SCALE).round();
                let q = scaled.clamp(f64::from(i16::MIN), f64::from(i16::MAX));
                if q != scaled {
                    clipped += 1;
                }
                writer.write_sample(q as i16)?;
            }
        }
        WavFormat::Float32 => {
            for &v in signal {
                let x = v.to_f64_lossy() as f32;
                if x.abs() > 1.0 {
                    clipped += 1;
                }
                writer.write_sample(x)?;
            }
        }
    }
    writer.finalize()?;
    if clipped > 0 {
        log::warn!("{}: {clipped} samples outside [-1, 1]", path.display());
    }
    Ok(())
}
