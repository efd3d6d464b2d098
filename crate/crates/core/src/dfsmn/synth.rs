//! Seeded synthetic audio with exact frame labels, for desk-scale training.

use std::f64::consts::TAU;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::LabeledUtterance;
use crate::audio::AudioBuffer;
use crate::features::{apply_cmvn, compute_fbank, estimate_cmvn, CmvnStats, FbankConfig, FeatureError, FeatureMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionKind {
    Silence,
    Noise,
    Speech,
    Singing,
    Music,
}

impl RegionKind {
    pub const ALL: [RegionKind; 5] = [
        RegionKind::Silence,
        RegionKind::Noise,
        RegionKind::Speech,
        RegionKind::Singing,
        RegionKind::Music,
    ];

    pub fn is_voice(self) -> bool {
        matches!(self, RegionKind::Speech | RegionKind::Singing)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub start_s: f64,
    pub end_s: f64,
    pub kind: RegionKind,
}

/// Which target matrix to derive from the regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSet {
    /// One channel: speech or singing.
    Vad,
    /// Speech, singing, music.
    Mvad,
}

impl LabelSet {
    pub fn num_channels(self) -> usize {
        match self {
            LabelSet::Vad => 1,
            LabelSet::Mvad => 3,
        }
    }

    fn row(self, kind: RegionKind) -> Vec<f64> {
        let b = |v: bool| if v { 1.0 } else { 0.0 };
        match self {
            LabelSet::Vad => vec![b(kind.is_voice())],
            LabelSet::Mvad => vec![
                b(kind == RegionKind::Speech),
                b(kind == RegionKind::Singing),
                b(kind == RegionKind::Music),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub num_utterances: usize,
    pub utterance_s: f64,
    pub min_region_s: f64,
    pub max_region_s: f64,
    pub sample_rate: u32,
}

impl Default for CorpusSpec {
    /// Half an hour of audio.
    fn default() -> Self {
        Self {
            num_utterances: 180,
            utterance_s: 10.0,
            min_region_s: 0.5,
            max_region_s: 3.0,
            sample_rate: 16_000,
        }
    }
}

impl CorpusSpec {
    pub fn total_duration_s(&self) -> f64 {
        self.num_utterances as f64 * self.utterance_s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticUtterance {
    pub audio: AudioBuffer,
    /// Contiguous, non-overlapping, covering `[0, duration)`.
    pub regions: Vec<Region>,
}

impl SyntheticUtterance {
    pub fn kind_at(&self, time_s: f64) -> RegionKind {
        self.regions
            .iter()
            .find(|r| r.start_s <= time_s && time_s < r.end_s)
            .map_or(RegionKind::Silence, |r| r.kind)
    }

    /// Labels for `num_frames` frames, each taken at its window centre.
    pub fn frame_labels(&self, num_frames: usize, shift_s: f64, window_s: f64, set: LabelSet) -> Array2<f64> {
        let mut out = Array2::zeros((num_frames, set.num_channels()));
        for t in 0..num_frames {
            let centre = t as f64 * shift_s + window_s / 2.0;
            for (k, v) in set.row(self.kind_at(centre)).into_iter().enumerate() {
                out[[t, k]] = v;
            }
        }
        out
    }
}

struct Synth<'a> {
    rng: &'a mut ChaCha8Rng,
    sr: f64,
}

impl Synth<'_> {
    fn noise(&mut self, n: usize, std: f64) -> Vec<f64> {
        let d = Normal::new(0.0, std).expect("positive std");
        (0..n).map(|_| d.sample(self.rng)).collect()
    }

    /// Harmonic source following the frequency contour `f0`.
    fn harmonic(&self, f0: &[f64], amp: f64) -> Vec<f64> {
        let nyq = self.sr / 2.0;
        let mut phase = 0.0;
        f0.iter()
            .map(|&f| {
                phase = (phase + TAU * f / self.sr) % TAU;
                let mut s = 0.0;
                let mut h = 1.0;
                while h * f < 4000.0_f64.min(nyq) {
                    s += (h * phase).sin() / h;
                    h += 1.0;
                }
                amp * s / 2.0
            })
            .collect()
    }

    fn speech(&mut self, n: usize) -> Vec<f64> {
        let f_start = self.rng.random_range(100.0..250.0);
        let f_end = f_start * self.rng.random_range(0.8..1.2);
        let rate = self.rng.random_range(3.0..6.0);
        let env_phase = self.rng.random_range(0.0..TAU);
        let f0: Vec<f64> = (0..n)
            .map(|i| f_start + (f_end - f_start) * i as f64 / n.max(1) as f64)
            .collect();
        let amp = self.rng.random_range(0.2..0.5);
        let mut x = self.harmonic(&f0, amp);
        for (i, v) in x.iter_mut().enumerate() {
            let t = i as f64 / self.sr;
            *v *= 0.35 + 0.65 * (0.5 + 0.5 * (TAU * rate * t + env_phase).sin());
        }
        x
    }

    fn singing(&mut self, n: usize) -> Vec<f64> {
        let base = self.rng.random_range(150.0..400.0);
        let vib_rate = self.rng.random_range(4.5..6.5);
        let depth = self.rng.random_range(0.02..0.05);
        let f0: Vec<f64> = (0..n)
            .map(|i| base * (1.0 + depth * (TAU * vib_rate * i as f64 / self.sr).sin()))
            .collect();
        let amp = self.rng.random_range(0.2..0.5);
        self.harmonic(&f0, amp)
    }

    fn music(&mut self, n: usize) -> Vec<f64> {
        let root = self.rng.random_range(200.0..500.0);
        let ratios: &[f64] = if self.rng.random_bool(0.5) {
            &[1.0, 1.25, 1.5, 2.0]
        } else {
            &[1.0, 1.2, 1.5]
        };
        let amp = self.rng.random_range(0.1..0.25);
        let phases: Vec<f64> = ratios.iter().map(|_| self.rng.random_range(0.0..TAU)).collect();
        (0..n)
            .map(|i| {
                let t = i as f64 / self.sr;
                ratios
                    .iter()
                    .zip(&phases)
                    .map(|(r, p)| (TAU * root * r * t + p).sin())
                    .sum::<f64>()
                    * amp
                    / ratios.len() as f64
            })
            .collect()
    }
}

fn generate_one(rng: &mut ChaCha8Rng, spec: &CorpusSpec) -> SyntheticUtterance {
    let sr = spec.sample_rate as f64;
    let total = (spec.utterance_s * sr).round() as usize;
    let mut samples = Vec::with_capacity(total);
    let mut regions = Vec::new();
    while samples.len() < total {
        let kind = RegionKind::ALL[rng.random_range(0..RegionKind::ALL.len())];
        let dur = rng.random_range(spec.min_region_s..=spec.max_region_s);
        let start = samples.len();
        let n = ((dur * sr).round() as usize).clamp(1, total - start);
        let mut s = Synth { rng: &mut *rng, sr };
        let chunk = match kind {
            RegionKind::Silence => s.noise(n, 1e-3),
            RegionKind::Noise => {
                let std = s.rng.random_range(0.03..0.1);
                s.noise(n, std)
            }
            RegionKind::Speech => s.speech(n),
            RegionKind::Singing => s.singing(n),
            RegionKind::Music => s.music(n),
        };
        samples.extend(chunk);
        regions.push(Region {
            start_s: start as f64 / sr,
            end_s: samples.len() as f64 / sr,
            kind,
        });
    }
    let floor = Normal::new(0.0, 2e-3).expect("positive std");
    for v in samples.iter_mut() {
        *v += floor.sample(rng);
    }
    SyntheticUtterance {
        audio: AudioBuffer::from_unit_floats(&samples, spec.sample_rate).expect("nonzero rate"),
        regions,
    }
}

/// Deterministic in `seed`: the same seed always gives a bit-identical corpus.
pub fn generate_synthetic_corpus(seed: u64, spec: &CorpusSpec) -> Vec<SyntheticUtterance> {
    (0..spec.num_utterances)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            generate_one(&mut rng, spec)
        })
        .collect()
}

/// FBank features plus aligned labels for each utterance.
pub fn featurize_corpus(
    corpus: &[SyntheticUtterance],
    fbank: &FbankConfig,
    set: LabelSet,
) -> Result<Vec<(FeatureMatrix, Array2<f64>)>, FeatureError> {
    corpus
        .iter()
        .map(|u| {
            let f = compute_fbank(&u.audio, fbank)?;
            let labels = u.frame_labels(f.num_frames(), f.frame_shift_s, f.frame_len_s, set);
            Ok((f, labels))
        })
        .collect()
}

/// Featurize, estimate CMVN over `corpus` (or use `stats`), normalize, and
/// attach labels.
pub fn build_dataset(
    corpus: &[SyntheticUtterance],
    fbank: &FbankConfig,
    set: LabelSet,
    stats: Option<&CmvnStats>,
) -> Result<(Vec<LabeledUtterance>, CmvnStats), FeatureError> {
    let raw = featurize_corpus(corpus, fbank, set)?;
    let stats = match stats {
        Some(s) => s.clone(),
        None => estimate_cmvn(raw.iter().map(|(f, _)| f))?,
    };
    let data = raw
        .into_iter()
        .map(|(f, labels)| {
            Ok(LabeledUtterance {
                features: apply_cmvn(&f, &stats)?,
                labels,
            })
        })
        .collect::<Result<Vec<_>, FeatureError>>()?;
    Ok((data, stats))
}
