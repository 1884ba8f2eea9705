//! 16-bit PCM WAV input and output.

use std::path::Path;

use crate::dsp::AudioBuffer;
use crate::{Error, Result, SAMPLE_RATE};

/// Reads a WAV file as mono, averaging channels.
///
/// Files not at 44.1 kHz are rejected unless `resample` is set, in which
/// case they are linearly resampled.
pub fn read_wav(path: &Path, resample: bool) -> Result<AudioBuffer> {
    let clip_err = |message: String| Error::Clip { path: path.to_path_buf(), message };
    let mut reader = hound::WavReader::open(path).map_err(|e| clip_err(e.to_string()))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| clip_err(e.to_string()))?
        }
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| clip_err(e.to_string()))?,
    };
    let mono: Vec<f32> = interleaved
        .chunks_exact(channels)
        .map(|c| c.iter().sum::<f32>() / channels as f32)
        .collect();
    let mono = if spec.sample_rate == SAMPLE_RATE {
        mono
    } else if resample {
        resample_linear(&mono, spec.sample_rate, SAMPLE_RATE)
    } else {
        return Err(clip_err(format!(
            "sample rate {} Hz (expected {SAMPLE_RATE}; pass --resample to convert)",
            spec.sample_rate
        )));
    };
    AudioBuffer::new(mono, SAMPLE_RATE).map_err(|e| clip_err(e.to_string()))
}

/// Writes mono 16-bit PCM, clipping to `[-1, 1]`.
pub fn write_wav(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in samples {
        writer.write_sample(quantize_i16(s))?;
    }
    writer.finalize()?;
    Ok(())
}

/// The 16-bit code written for a sample.
pub fn quantize_i16(sample: f32) -> i16 {
    (sample.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16
}

pub fn resample_linear(input: &[f32], from: u32, to: u32) -> Vec<f32> {
    if input.is_empty() || from == to {
        return input.to_vec();
    }
    let out_len = ((input.len() as u64 * to as u64) / from as u64) as usize;
    let step = from as f64 / to as f64;
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * step;
            let j = pos.floor() as usize;
            let frac = (pos - j as f64) as f32;
            let a = input[j.min(input.len() - 1)];
            let b = input[(j + 1).min(input.len() - 1)];
            a + (b - a) * frac
        })
        .collect()
}
