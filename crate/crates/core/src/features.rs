//! 80-dimensional log-Mel filterbank features and global CMVN.
//!
//! Framing drops the tail: an `N`-sample signal yields
//! `1 + (N - W) / S` frames for window `W` and shift `S` (integer division),
//! and nothing is padded. The front-end is fixed to pre-emphasis 0.97, a
//! Hamming window, an HTK mel scale over 20 Hz - 7600 Hz and an additive log
//! floor of 1e-10.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{AudioBuffer, CANONICAL_SAMPLE_RATE};

/// Floor applied to CMVN variances so constant dimensions never divide by zero.
pub const VARIANCE_FLOOR: f64 = 1e-8;

pub const CMVN_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("audio has {samples} samples, shorter than one {window}-sample window")]
    TooShort { samples: usize, window: usize },
    #[error("audio is {rate} Hz; resample to {CANONICAL_SAMPLE_RATE} Hz first")]
    ResampleRequired { rate: u32 },
    #[error("invalid fbank config: {0}")]
    InvalidConfig(String),
    #[error("cannot estimate CMVN from zero frames")]
    EmptyCorpus,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("CMVN stats file has version {0}, expected {CMVN_FORMAT_VERSION}")]
    Version(u32),
    #[error("invalid CMVN stats: {0}")]
    InvalidStats(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowFunction {
    /// 0.54 - 0.46 cos(2 pi n / (N - 1))
    Hamming,
    /// Hann window raised to 0.85, as in Kaldi.
    Povey,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FbankConfig {
    pub num_mels: usize,
    pub window_ms: f64,
    pub shift_ms: f64,
    pub low_freq_hz: f64,
    pub high_freq_hz: f64,
    pub preemphasis: f64,
    pub window_function: WindowFunction,
    pub log_floor: f64,
}

impl Default for FbankConfig {
    fn default() -> Self {
        Self {
            num_mels: 80,
            window_ms: 25.0,
            shift_ms: 10.0,
            low_freq_hz: 20.0,
            high_freq_hz: 7600.0,
            preemphasis: 0.97,
            window_function: WindowFunction::Hamming,
            log_floor: 1e-10,
        }
    }
}

impl FbankConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        let nyquist = CANONICAL_SAMPLE_RATE as f64 / 2.0;
        let bad = |m: &str| Err(FeatureError::InvalidConfig(m.to_string()));
        if self.num_mels == 0 {
            return bad("num_mels must be at least 1");
        }
        if !(self.shift_ms > 0.0 && self.shift_ms <= self.window_ms) {
            return bad("need 0 < shift_ms <= window_ms");
        }
        if !(self.low_freq_hz >= 0.0
            && self.low_freq_hz < self.high_freq_hz
            && self.high_freq_hz <= nyquist)
        {
            return bad("need 0 <= low_freq_hz < high_freq_hz <= sample_rate / 2");
        }
        if !(self.log_floor > 0.0) {
            return bad("log_floor must be positive");
        }
        if self.window_samples() == 0 || self.shift_samples() == 0 {
            return bad("window and shift must cover at least one sample");
        }
        Ok(())
    }

    pub fn window_samples(&self) -> usize {
        (self.window_ms * CANONICAL_SAMPLE_RATE as f64 / 1000.0).round() as usize
    }

    pub fn shift_samples(&self) -> usize {
        (self.shift_ms * CANONICAL_SAMPLE_RATE as f64 / 1000.0).round() as usize
    }

    pub fn fft_size(&self) -> usize {
        self.window_samples().next_power_of_two()
    }

    /// Drop-tail frame count for `num_samples` samples, or `None` when the
    /// signal does not fill a single window.
    pub fn frame_count(&self, num_samples: usize) -> Option<usize> {
        let w = self.window_samples();
        (num_samples >= w).then(|| 1 + (num_samples - w) / self.shift_samples())
    }
}

/// `T x D` feature frames on a fixed analysis grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub frames: Array2<f64>,
    pub frame_shift_s: f64,
    pub frame_len_s: f64,
}

impl FeatureMatrix {
    pub fn new(frames: Array2<f64>, frame_shift_s: f64, frame_len_s: f64) -> Self {
        Self {
            frames,
            frame_shift_s,
            frame_len_s,
        }
    }

    /// Wrap raw frames on the canonical 10 ms / 25 ms grid.
    pub fn from_frames(frames: Array2<f64>) -> Self {
        Self::new(frames, 0.010, 0.025)
    }

    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.frames.iter().all(|v| v.is_finite())
    }

    /// Frames `[start, end)` as a new matrix on the same grid.
    pub fn slice_frames(&self, start: usize, end: usize) -> FeatureMatrix {
        FeatureMatrix {
            frames: self.frames.slice(ndarray::s![start..end, ..]).to_owned(),
            frame_shift_s: self.frame_shift_s,
            frame_len_s: self.frame_len_s,
        }
    }
}

/// Precomputed window, mel weights and FFT plan for one [`FbankConfig`].
pub struct FbankExtractor {
    cfg: FbankConfig,
    window: Vec<f64>,
    /// `num_mels x (fft_size / 2 + 1)`
    mel_weights: Array2<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl FbankExtractor {
    pub fn new(cfg: FbankConfig) -> Result<Self, FeatureError> {
        cfg.validate()?;
        let window = window_coefficients(cfg.window_function, cfg.window_samples());
        let mel_weights = mel_filterbank(
            cfg.num_mels,
            cfg.fft_size(),
            CANONICAL_SAMPLE_RATE as f64,
            cfg.low_freq_hz,
            cfg.high_freq_hz,
        );
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size());
        Ok(Self {
            cfg,
            window,
            mel_weights,
            fft,
        })
    }

    pub fn config(&self) -> &FbankConfig {
        &self.cfg
    }

    pub fn compute(&self, audio: &AudioBuffer) -> Result<FeatureMatrix, FeatureError> {
        if audio.sample_rate() != CANONICAL_SAMPLE_RATE {
            return Err(FeatureError::ResampleRequired {
                rate: audio.sample_rate(),
            });
        }
        let w = self.cfg.window_samples();
        let s = self.cfg.shift_samples();
        let num_frames = self
            .cfg
            .frame_count(audio.len())
            .ok_or(FeatureError::TooShort {
                samples: audio.len(),
                window: w,
            })?;

        let n_fft = self.cfg.fft_size();
        let n_bins = n_fft / 2 + 1;
        let mut out = Array2::<f64>::zeros((num_frames, self.cfg.num_mels));
        let mut frame = vec![0.0f64; w];
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        let mut power = Array1::<f64>::zeros(n_bins);
        let samples = audio.samples();

        for (t, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            for (dst, &src) in frame.iter_mut().zip(&samples[t * s..t * s + w]) {
                *dst = src as f64;
            }
            preemphasize(&mut frame, self.cfg.preemphasis);
            for (i, c) in buf.iter_mut().enumerate() {
                *c = if i < w {
                    Complex::new(frame[i] * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process(&mut buf);
            for (k, p) in power.iter_mut().enumerate() {
                *p = buf[k].norm_sqr();
            }
            let energies = self.mel_weights.dot(&power);
            for (dst, e) in row.iter_mut().zip(energies.iter()) {
                *dst = (e + self.cfg.log_floor).ln();
            }
        }
        Ok(FeatureMatrix::new(
            out,
            self.cfg.shift_ms / 1000.0,
            self.cfg.window_ms / 1000.0,
        ))
    }
}

/// Log-Mel filterbank features for a 16 kHz mono buffer.
pub fn compute_fbank(audio: &AudioBuffer, cfg: &FbankConfig) -> Result<FeatureMatrix, FeatureError> {
    FbankExtractor::new(cfg.clone())?.compute(audio)
}

/// In-place first-order pre-emphasis; the first sample is scaled by `1 - coeff`.
fn preemphasize(frame: &mut [f64], coeff: f64) {
    if coeff == 0.0 || frame.is_empty() {
        return;
    }
    for i in (1..frame.len()).rev() {
        frame[i] -= coeff * frame[i - 1];
    }
    frame[0] -= coeff * frame[0];
}

fn window_coefficients(kind: WindowFunction, len: usize) -> Vec<f64> {
    let denom = (len.max(2) - 1) as f64;
    (0..len)
        .map(|n| {
            let c = (2.0 * std::f64::consts::PI * n as f64 / denom).cos();
            match kind {
                WindowFunction::Hamming => 0.54 - 0.46 * c,
                WindowFunction::Povey => (0.5 - 0.5 * c).powf(0.85),
            }
        })
        .collect()
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters evenly spaced on the HTK mel scale, evaluated at each
/// FFT bin's centre frequency.
pub fn mel_filterbank(
    num_mels: usize,
    fft_size: usize,
    sample_rate: f64,
    low_hz: f64,
    high_hz: f64,
) -> Array2<f64> {
    let n_bins = fft_size / 2 + 1;
    let mel_lo = hz_to_mel(low_hz);
    let mel_hi = hz_to_mel(high_hz);
    let step = (mel_hi - mel_lo) / (num_mels + 1) as f64;
    let mut weights = Array2::<f64>::zeros((num_mels, n_bins));
    for m in 0..num_mels {
        let left = mel_lo + step * m as f64;
        let center = left + step;
        let right = center + step;
        for k in 0..n_bins {
            let mel = hz_to_mel(k as f64 * sample_rate / fft_size as f64);
            let w = if mel > left && mel <= center {
                (mel - left) / (center - left)
            } else if mel > center && mel < right {
                (right - mel) / (right - center)
            } else {
                0.0
            };
            weights[[m, k]] = w;
        }
    }
    weights
}

/// Dataset-wide per-dimension mean and (population) variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmvnStats {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub frame_count: u64,
}

#[derive(Serialize, Deserialize)]
struct CmvnFile {
    version: u32,
    #[serde(flatten)]
    stats: CmvnStats,
}

impl CmvnStats {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            variance: vec![1.0; dim],
            frame_count: 1,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn validate(&self) -> Result<(), FeatureError> {
        if self.mean.len() != self.variance.len() {
            return Err(FeatureError::InvalidStats(
                "mean and variance lengths differ".into(),
            ));
        }
        if self.frame_count == 0 {
            return Err(FeatureError::InvalidStats("frame_count is zero".into()));
        }
        if self.variance.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(FeatureError::InvalidStats(
                "variances must be positive and finite".into(),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&CmvnFile {
            version: CMVN_FORMAT_VERSION,
            stats: self.clone(),
        })
        .expect("cmvn stats serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, FeatureError> {
        let file: CmvnFile = serde_json::from_str(text)?;
        if file.version != CMVN_FORMAT_VERSION {
            return Err(FeatureError::Version(file.version));
        }
        file.stats.validate()?;
        Ok(file.stats)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FeatureError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FeatureError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Welford accumulation of per-dimension statistics over every frame of every
/// matrix.
pub fn estimate_cmvn<'a, I>(features: I) -> Result<CmvnStats, FeatureError>
where
    I: IntoIterator<Item = &'a FeatureMatrix>,
{
    let mut count: u64 = 0;
    let mut mean: Vec<f64> = Vec::new();
    let mut m2: Vec<f64> = Vec::new();
    for fm in features {
        if mean.is_empty() {
            mean = vec![0.0; fm.dim()];
            m2 = vec![0.0; fm.dim()];
        } else if fm.dim() != mean.len() {
            return Err(FeatureError::DimensionMismatch {
                expected: mean.len(),
                actual: fm.dim(),
            });
        }
        for row in fm.frames.axis_iter(Axis(0)) {
            count += 1;
            let n = count as f64;
            for ((mu, acc), &x) in mean.iter_mut().zip(m2.iter_mut()).zip(row.iter()) {
                let delta = x - *mu;
                *mu += delta / n;
                *acc += delta * (x - *mu);
            }
        }
    }
    if count == 0 {
        return Err(FeatureError::EmptyCorpus);
    }
    let variance = m2
        .iter()
        .map(|&s| (s / count as f64).max(VARIANCE_FLOOR))
        .collect();
    Ok(CmvnStats {
        mean,
        variance,
        frame_count: count,
    })
}

/// `(x - mean) / sqrt(variance)` per dimension.
pub fn apply_cmvn(features: &FeatureMatrix, stats: &CmvnStats) -> Result<FeatureMatrix, FeatureError> {
    if features.dim() != stats.dim() {
        return Err(FeatureError::DimensionMismatch {
            expected: stats.dim(),
            actual: features.dim(),
        });
    }
    let mean = Array1::from(stats.mean.clone());
    let inv_std = Array1::from_iter(stats.variance.iter().map(|v| 1.0 / v.sqrt()));
    let frames = (&features.frames - &mean) * &inv_std;
    Ok(FeatureMatrix::new(
        frames,
        features.frame_shift_s,
        features.frame_len_s,
    ))
}
