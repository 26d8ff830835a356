//! Mono 16 kHz waveforms and 16-bit PCM WAV I/O.

use std::path::Path;

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;

/// Mono waveform at 16 kHz. Samples are nominally in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidAudio(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples })
    }

    pub fn zeros(len: usize) -> Self {
        Self { samples: vec![0.0; len] }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE as f64
    }

    /// Mean power (mean of squares).
    pub fn power(&self) -> f64 {
        power(&self.samples)
    }

    pub fn rms(&self) -> f64 {
        self.power().sqrt()
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self { samples: self.samples.iter().map(|s| s * gain).collect() }
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self { samples: self.samples[range].to_vec() }
    }

    pub fn truncated(&self, len: usize) -> Self {
        Self { samples: self.samples[..len.min(self.samples.len())].to_vec() }
    }

    pub fn read_wav(path: impl AsRef<Path>) -> Result<Self> {
        let reader = hound::WavReader::open(path.as_ref())?;
        let spec = reader.spec();
        if spec.channels != 1 {
            return Err(Error::InvalidAudio(format!("expected mono, got {} channels", spec.channels)));
        }
        if spec.sample_rate != SAMPLE_RATE {
            return Err(Error::InvalidAudio(format!(
                "expected {SAMPLE_RATE} Hz, got {} Hz",
                spec.sample_rate
            )));
        }
        if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
            return Err(Error::InvalidAudio("expected 16-bit signed PCM".into()));
        }
        let samples = reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self { samples })
    }

    /// Writes 16-bit PCM. Samples outside the representable range are clipped.
    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: SAMPLE_RATE,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut writer = hound::WavWriter::create(path.as_ref(), spec)?;
        for &s in &self.samples {
            writer.write_sample(to_pcm16(s))?;
        }
        writer.finalize()?;
        Ok(())
    }
}

pub fn to_pcm16(s: f64) -> i16 {
    (s * 32768.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

pub fn power(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite() {
        assert!(AudioBuffer::new(vec![0.0, f64::NAN]).is_err());
        assert!(AudioBuffer::new(vec![0.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn wav_round_trip_is_exact_on_pcm_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let samples: Vec<f64> = (-50..50).map(|i| i as f64 * 300.0 / 32768.0).collect();
        let audio = AudioBuffer::new(samples).unwrap();
        audio.write_wav(&path).unwrap();
        let back = AudioBuffer::read_wav(&path).unwrap();
        assert_eq!(audio, back);
    }

    #[test]
    fn wav_clips_out_of_range() {
        assert_eq!(to_pcm16(1.5), i16::MAX);
        assert_eq!(to_pcm16(-1.0), i16::MIN);
        assert_eq!(to_pcm16(0.5), 16384);
    }

    #[test]
    fn rejects_wrong_rate() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        assert!(matches!(AudioBuffer::read_wav(&path), Err(Error::InvalidAudio(_))));
    }
}
