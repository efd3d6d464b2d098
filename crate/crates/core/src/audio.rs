//! Mono 16-bit PCM audio buffers and WAV ingestion.

use std::path::Path;

use thiserror::Error;

/// The sample rate every model in the toolkit expects.
pub const CANONICAL_SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
    #[error("unsupported wav encoding: {0}")]
    Unsupported(String),
    #[error("invalid sample rate {0}")]
    InvalidSampleRate(u32),
    #[error("crop [{start_s}, {end_s}) is outside the {duration_s} s buffer")]
    CropOutOfRange {
        start_s: f64,
        end_s: f64,
        duration_s: f64,
    },
}

/// Single-channel PCM waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<i16>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<i16>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::InvalidSampleRate(sample_rate));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// Build a 16 kHz buffer from floating point samples in [-1, 1], saturating
    /// anything outside that range.
    pub fn from_unit_floats(samples: &[f64], sample_rate: u32) -> Result<Self, AudioError> {
        let pcm = samples
            .iter()
            .map(|&s| (s * 32767.0).round().clamp(-32768.0, 32767.0) as i16)
            .collect();
        Self::new(pcm, sample_rate)
    }

    pub fn samples(&self) -> &[i16] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Always 1: multi-channel input is downmixed on load.
    pub fn channel_count(&self) -> u16 {
        1
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Copy out the samples covering `[start_s, end_s)`.
    pub fn crop(&self, start_s: f64, end_s: f64) -> Result<AudioBuffer, AudioError> {
        let duration_s = self.duration_s();
        if !(start_s >= 0.0 && start_s < end_s && end_s <= duration_s + 1e-9) {
            return Err(AudioError::CropOutOfRange {
                start_s,
                end_s,
                duration_s,
            });
        }
        let sr = self.sample_rate as f64;
        let a = ((start_s * sr).round() as usize).min(self.samples.len());
        let b = ((end_s * sr).round() as usize).clamp(a, self.samples.len());
        Ok(AudioBuffer {
            samples: self.samples[a..b].to_vec(),
            sample_rate: self.sample_rate,
        })
    }

    /// Linear-interpolation resampling. Only used when a caller explicitly
    /// opts in; feature extraction itself rejects non-canonical rates.
    pub fn resample_linear(&self, target_rate: u32) -> Result<AudioBuffer, AudioError> {
        if target_rate == 0 {
            return Err(AudioError::InvalidSampleRate(target_rate));
        }
        if target_rate == self.sample_rate || self.samples.is_empty() {
            return Ok(AudioBuffer {
                samples: self.samples.clone(),
                sample_rate: target_rate,
            });
        }
        let ratio = self.sample_rate as f64 / target_rate as f64;
        let out_len = ((self.samples.len() as f64) / ratio).floor() as usize;
        let last = self.samples.len() - 1;
        let samples = (0..out_len)
            .map(|i| {
                let pos = i as f64 * ratio;
                let lo = (pos.floor() as usize).min(last);
                let hi = (lo + 1).min(last);
                let frac = pos - lo as f64;
                let v = self.samples[lo] as f64 * (1.0 - frac) + self.samples[hi] as f64 * frac;
                v.round().clamp(-32768.0, 32767.0) as i16
            })
            .collect();
        Ok(AudioBuffer {
            samples,
            sample_rate: target_rate,
        })
    }
}

/// Read a RIFF/WAVE file holding 16-bit integer PCM. Multi-channel audio is
/// averaged down to mono.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer, AudioError> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(AudioError::Unsupported(format!(
            "{:?} {}-bit, expected 16-bit integer PCM",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let channels = spec.channels.max(1) as usize;
    let raw = reader.samples::<i16>().collect::<Result<Vec<_>, _>>()?;
    let samples = if channels == 1 {
        raw
    } else {
        raw.chunks_exact(channels)
            .map(|frame| {
                let sum: i32 = frame.iter().map(|&s| s as i32).sum();
                (sum as f64 / channels as f64).round() as i16
            })
            .collect()
    };
    AudioBuffer::new(samples, spec.sample_rate)
}

pub fn write_wav(path: impl AsRef<Path>, audio: &AudioBuffer) -> Result<(), AudioError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in &audio.samples {
        writer.write_sample(s)?;
    }
    writer.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duration_matches_sample_count() {
        let a = AudioBuffer::new(vec![0; 8000], 16_000).unwrap();
        assert_eq!(a.duration_s(), 0.5);
        assert_eq!(a.channel_count(), 1);
    }

    #[test]
    fn zero_rate_rejected() {
        assert!(AudioBuffer::new(vec![], 0).is_err());
    }

    #[test]
    fn crop_takes_the_requested_window() {
        let a = AudioBuffer::new((0..16_000).map(|i| (i % 100) as i16).collect(), 16_000).unwrap();
        let c = a.crop(0.25, 0.5).unwrap();
        assert_eq!(c.len(), 4000);
        assert_eq!(c.samples()[0], a.samples()[4000]);
        assert!(a.crop(0.5, 1.5).is_err());
    }

    #[test]
    fn wav_round_trip_and_stereo_downmix() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let a = AudioBuffer::new(vec![1, -2, 300, 32767, -32768], 16_000).unwrap();
        write_wav(&path, &a).unwrap();
        assert_eq!(read_wav(&path).unwrap(), a);

        let stereo = dir.path().join("s.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&stereo, spec).unwrap();
        for s in [100i16, 300, -10, -30] {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
        let m = read_wav(&stereo).unwrap();
        assert_eq!(m.samples(), &[200, -20]);
        assert_eq!(m.sample_rate(), 8000);
    }

    #[test]
    fn resample_halves_length() {
        let a = AudioBuffer::new((0..3200).map(|i| i as i16).collect(), 32_000).unwrap();
        let r = a.resample_linear(16_000).unwrap();
        assert_eq!(r.len(), 1600);
        assert_eq!(r.samples()[10], 20);
    }
}
