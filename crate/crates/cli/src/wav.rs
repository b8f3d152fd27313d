//! Mono 16-bit PCM WAV files.

use std::path::Path;

use asv_vote_core::Waveform;

use crate::error::{CliError, Result};

/// Float sample to 16-bit PCM, rounding to nearest and saturating.
pub fn to_pcm16(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn from_pcm16(v: i16) -> f64 {
    f64::from(v) / 32768.0
}

/// Quantize a waveform the way writing and re-reading it would.
pub fn quantize(samples: &[f64]) -> Vec<f64> {
    samples.iter().map(|&x| from_pcm16(to_pcm16(x))).collect()
}

fn wav_err(stage: &'static str, path: &Path) -> impl FnOnce(hound::Error) -> CliError {
    let path = path.to_path_buf();
    move |source| CliError::Wav {
        stage,
        path,
        source,
    }
}

pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err("write wav", path))?;
    for &x in samples {
        writer.write_sample(to_pcm16(x)).map_err(wav_err("write wav", path))?;
    }
    writer.finalize().map_err(wav_err("write wav", path))
}

/// Read a mono 16-bit file. Other layouts are rejected rather than converted.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(path).map_err(wav_err("read wav", path))?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(CliError::Invalid {
            stage: "read wav",
            msg: format!(
                "{}: expected mono 16-bit PCM, got {} channel(s) at {} bits",
                path.display(),
                spec.channels,
                spec.bits_per_sample
            ),
        });
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(from_pcm16))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(wav_err("read wav", path))?;
    Ok(Waveform::new(samples, spec.sample_rate))
}
