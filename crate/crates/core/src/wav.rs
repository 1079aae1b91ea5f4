//! Multichannel WAV I/O. Channel order equals microphone index order.

use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::stft::Audio;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavFormat {
    Float32,
    Pcm16,
}

pub fn write_wav(
    path: impl AsRef<Path>,
    audio: &Audio,
    sample_rate: u32,
    format: WavFormat,
) -> Result<()> {
    let (channels, samples) = (audio.shape()[0], audio.shape()[1]);
    if channels == 0 || channels > u16::MAX as usize {
        return Err(Error::parameter("invalid channel count"));
    }
    let spec = hound::WavSpec {
        channels: channels as u16,
        sample_rate,
        bits_per_sample: match format {
            WavFormat::Float32 => 32,
            WavFormat::Pcm16 => 16,
        },
        sample_format: match format {
            WavFormat::Float32 => hound::SampleFormat::Float,
            WavFormat::Pcm16 => hound::SampleFormat::Int,
        },
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for s in 0..samples {
        for ch in 0..channels {
            let v = audio[(ch, s)];
            match format {
                WavFormat::Float32 => writer.write_sample(v as f32)?,
                WavFormat::Pcm16 => {
                    let q = (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    writer.write_sample(q)?;
                }
            }
        }
    }
    writer.finalize()?;
    Ok(())
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<(Audio, u32)> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::parameter(format!(
                "unsupported wav format: {fmt:?} {bits} bits"
            )))
        }
    };
    let n = samples.len() / channels;
    let mut audio = Array2::zeros((channels, n));
    for s in 0..n {
        for ch in 0..channels {
            audio[(ch, s)] = samples[s * channels + ch];
        }
    }
    Ok((audio, spec.sample_rate))
}
