use std::io::Cursor;
use std::path::Path;

use super::features::{AudioClip, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};

fn wav_err(detail: impl Into<String>) -> Error {
    Error::Format {
        module: "frontend",
        what: "WAV file",
        detail: detail.into(),
    }
}

/// Decodes mono 16-bit PCM WAV at 16 kHz. Other rates are rejected, not resampled.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip> {
    let reader = hound::WavReader::new(Cursor::new(bytes)).map_err(|e| wav_err(e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(wav_err(format!("{} channels, need mono", spec.channels)));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(wav_err(format!(
            "{}-bit {:?} samples, need 16-bit PCM",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    if spec.sample_rate != SAMPLE_RATE_HZ {
        return Err(wav_err(format!(
            "sample rate {} Hz, need {SAMPLE_RATE_HZ}",
            spec.sample_rate
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| wav_err(e.to_string()))?;
    if samples.is_empty() {
        return Err(wav_err("no samples"));
    }
    AudioClip::new(samples, spec.sample_rate)
}

pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes).map_err(|e| match e {
        Error::Format { module, what, detail } => Error::Format {
            module,
            what,
            detail: format!("{}: {detail}", path.display()),
        },
        other => other,
    })
}

pub fn encode_wav(clip: &AudioClip) -> Result<Vec<u8>> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate_hz(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut out = Cursor::new(Vec::new());
    {
        let mut w = hound::WavWriter::new(&mut out, spec).map_err(|e| wav_err(e.to_string()))?;
        for s in clip.samples() {
            let v = (s * 32767.0).round().clamp(-32768.0, 32767.0) as i16;
            w.write_sample(v).map_err(|e| wav_err(e.to_string()))?;
        }
        w.finalize().map_err(|e| wav_err(e.to_string()))?;
    }
    Ok(out.into_inner())
}

pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    std::fs::write(path, encode_wav(clip)?).map_err(|e| Error::io(path, e))
}
