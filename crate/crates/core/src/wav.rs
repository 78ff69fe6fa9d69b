//! WAV file reading and writing.
//!
//! Reads 16-bit PCM (scaled to [-1, 1) by 1/32768) and 32-bit IEEE float
//! (lossless into f64). Writes 32-bit float, so a read-write round trip of
//! float data is bit exact.

use std::path::Path;

use ndarray::Array2;

use crate::error::{BssError, Result};
use crate::signal::TimeDomainAudio;

pub fn read_wav<P: AsRef<Path>>(path: P) -> Result<TimeDomainAudio> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(BssError::UnsupportedWav("zero channels".into()));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32_768.0))
            .collect::<std::result::Result<_, _>>()?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
        (format, bits) => {
            return Err(BssError::UnsupportedWav(format!(
                "{bits}-bit {}",
                match format {
                    hound::SampleFormat::Int => "PCM",
                    hound::SampleFormat::Float => "float",
                }
            )));
        }
    };
    let frames = interleaved.len() / channels;
    if frames == 0 {
        return Err(BssError::UnsupportedWav("empty file".into()));
    }
    let mut samples = Array2::zeros((channels, frames));
    for (i, v) in interleaved.iter().enumerate() {
        samples[(i % channels, i / channels)] = *v;
    }
    TimeDomainAudio::new(samples, spec.sample_rate)
}

/// Write as 32-bit IEEE float.
pub fn write_wav<P: AsRef<Path>>(audio: &TimeDomainAudio, path: P) -> Result<()> {
    let spec = hound::WavSpec {
        channels: audio.channels() as u16,
        sample_rate: audio.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for i in 0..audio.len() {
        for m in 0..audio.channels() {
            writer.write_sample(audio.samples[(m, i)] as f32)?;
        }
    }
    writer.finalize()?;
    Ok(())
}
