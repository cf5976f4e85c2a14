//! WAV (RIFF) file I/O: PCM16 and IEEE float32, mono or multichannel.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

use super::waveform::{MultichannelWaveform, Waveform};

/// Reads a PCM16 or float32 WAV file into de-interleaved channels.
pub fn read_wav(path: impl AsRef<Path>) -> Result<MultichannelWaveform> {
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::UnsupportedWav("zero channels".into()));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::UnsupportedWav(format!(
                "{fmt:?} at {bits} bits; expected PCM16 or float32"
            )))
        }
    };
    if interleaved.is_empty() {
        return Err(Error::Empty("wav file"));
    }
    let frames = interleaved.len() / channels;
    let mut out = vec![Vec::with_capacity(frames); channels];
    for (i, v) in interleaved.iter().enumerate() {
        out[i % channels].push(*v);
    }
    MultichannelWaveform::new(
        out.into_iter()
            .map(|samples| Waveform::new(samples, spec.sample_rate))
            .collect::<Result<_>>()?,
    )
}

/// Writes IEEE float32 WAV. Float32 round-trips losslessly through
/// [`read_wav`] for f32-representable samples.
pub fn write_wav(path: impl AsRef<Path>, w: &MultichannelWaveform) -> Result<()> {
    let spec = WavSpec {
        channels: w.channel_count() as u16,
        sample_rate: w.sample_rate(),
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for t in 0..w.len() {
        for c in 0..w.channel_count() {
            writer.write_sample(w.channel(c).samples[t] as f32)?;
        }
    }
    writer.finalize()?;
    Ok(())
}

/// Writes PCM16 WAV; quantization error is at most one LSB (2^-15).
pub fn write_wav_pcm16(path: impl AsRef<Path>, w: &MultichannelWaveform) -> Result<()> {
    let spec = WavSpec {
        channels: w.channel_count() as u16,
        sample_rate: w.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for t in 0..w.len() {
        for c in 0..w.channel_count() {
            let q = (w.channel(c).samples[t] * 32768.0).round();
            writer.write_sample(q.clamp(-32768.0, 32767.0) as i16)?;
        }
    }
    writer.finalize()?;
    Ok(())
}
