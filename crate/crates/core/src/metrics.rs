//! Evaluation metrics: frame-level VAD scores, AUC-ROC, CER, punctuation
//! P/R/F1 and LID accuracy. All rates are percentages.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decode::LidResult;
use crate::punc::PuncTag;
use crate::text::is_punctuation;
use crate::vad_post::Segment;

pub const FRAME_SHIFT_S: f64 = 0.010;
pub const FRAME_LEN_S: f64 = 0.025;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("segment ends at {end}s, past the {duration}s duration")]
    SegmentBeyondDuration { end: f64, duration: f64 },
    #[error("invalid duration {0}")]
    InvalidDuration(f64),
    #[error("AUC is undefined when the reference holds a single class")]
    SingleClass,
    #[error("score {value} at index {index} is not a probability")]
    InvalidScore { index: usize, value: f64 },
    #[error("reference has no scoring units")]
    EmptyReference,
    #[error("nothing to average")]
    Empty,
}

/// Binary per-frame labels on a fixed analysis grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameLabels {
    pub labels: Vec<bool>,
    pub frame_shift_s: f64,
    pub frame_len_s: f64,
}

impl FrameLabels {
    pub fn new(labels: Vec<bool>) -> Self {
        Self {
            labels,
            frame_shift_s: FRAME_SHIFT_S,
            frame_len_s: FRAME_LEN_S,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn center_s(&self, t: usize) -> f64 {
        t as f64 * self.frame_shift_s + 0.5 * self.frame_len_s
    }
}

/// Per-frame voice posteriors in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VadScores {
    pub scores: Vec<f64>,
}

impl VadScores {
    pub fn new(scores: Vec<f64>) -> Result<Self, MetricsError> {
        if let Some((index, &value)) = scores.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(MetricsError::InvalidScore { index, value });
        }
        Ok(Self { scores })
    }

    pub fn binarize(&self, threshold: f64) -> FrameLabels {
        FrameLabels::new(self.scores.iter().map(|&s| s >= threshold).collect())
    }
}

/// Whole frames that fit in `duration_s`; a partial last window is dropped.
pub fn frame_count(duration_s: f64) -> usize {
    if duration_s < FRAME_LEN_S {
        return 0;
    }
    ((duration_s - FRAME_LEN_S) / FRAME_SHIFT_S + 1e-9).floor() as usize + 1
}

/// A frame is voice iff its window centre lies in a segment (closed interval).
pub fn frame_labels_from_segments(segments: &[Segment], total_duration_s: f64) -> Result<FrameLabels, MetricsError> {
    if !total_duration_s.is_finite() || total_duration_s < 0.0 {
        return Err(MetricsError::InvalidDuration(total_duration_s));
    }
    if let Some(s) = segments.iter().find(|s| s.end_s > total_duration_s + 1e-9) {
        return Err(MetricsError::SegmentBeyondDuration {
            end: s.end_s,
            duration: total_duration_s,
        });
    }
    let mut out = FrameLabels::new(vec![false; frame_count(total_duration_s)]);
    for t in 0..out.len() {
        let c = out.center_s(t);
        out.labels[t] = segments.iter().any(|s| s.start_s <= c && c <= s.end_s);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn from_labels(pred: &[bool], reference: &[bool]) -> Result<Self, MetricsError> {
        check_len(pred.len(), reference.len())?;
        let mut c = Confusion::default();
        for (&p, &r) in pred.iter().zip(reference) {
            match (p, r) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }
}

fn check_len(left: usize, right: usize) -> Result<(), MetricsError> {
    if left != right {
        return Err(MetricsError::LengthMismatch { left, right });
    }
    Ok(())
}

/// `num / den` as a percentage, 0 for an empty denominator.
fn pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VadReport {
    pub f1: f64,
    pub far: f64,
    pub mr: f64,
    pub counts: Confusion,
}

/// F1 of the voice class, false-alarm rate over non-voice frames and miss
/// rate over voice frames.
pub fn f1_far_mr(pred: &FrameLabels, reference: &FrameLabels) -> Result<VadReport, MetricsError> {
    let c = Confusion::from_labels(&pred.labels, &reference.labels)?;
    Ok(VadReport {
        f1: harmonic(pct(c.tp, c.tp + c.fp), pct(c.tp, c.tp + c.fn_)),
        far: pct(c.fp, c.fp + c.tn),
        mr: pct(c.fn_, c.fn_ + c.tp),
        counts: c,
    })
}

/// Mann-Whitney AUC with midranks for ties, times 100. Any finite scores.
pub fn auc_from_scores(scores: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    check_len(scores.len(), labels.len())?;
    if let Some((index, &value)) = scores.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(MetricsError::InvalidScore { index, value });
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum keeps midranks integral.
    let mut pos_rank2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid2 = (i + 1 + j + 1) as u128;
        pos_rank2 += mid2 * order[i..=j].iter().filter(|&&k| labels[k]).count() as u128;
        i = j + 1;
    }
    let (np, nn) = (n_pos as u128, n_neg as u128);
    // U2 = 2 * (rank sum - np(np+1)/2), so AUC = U2 / (2 np nn).
    let u2 = pos_rank2 - np * (np + 1);
    Ok(100.0 * u2 as f64 / (2 * np * nn) as f64)
}

pub fn auc_roc(scores: &VadScores, reference: &FrameLabels) -> Result<f64, MetricsError> {
    auc_from_scores(&scores.scores, &reference.labels)
}

/// Unit extraction for CER.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CerConfig {
    pub remove_punctuation: bool,
    pub lowercase_ascii: bool,
    /// Fold full-width ASCII variants (U+FF01..U+FF5E) to half-width.
    pub fold_width: bool,
}

impl Default for CerConfig {
    fn default() -> Self {
        Self {
            remove_punctuation: true,
            lowercase_ascii: true,
            fold_width: false,
        }
    }
}

pub fn cer_units(text: &str, cfg: &CerConfig) -> Vec<char> {
    text.chars()
        .map(|c| match c as u32 {
            0xFF01..=0xFF5E if cfg.fold_width => char::from_u32(c as u32 - 0xFEE0).expect("ASCII range"),
            0x3000 if cfg.fold_width => ' ',
            _ => c,
        })
        .filter(|&c| !c.is_whitespace() && !(cfg.remove_punctuation && is_punctuation(c)))
        .map(|c| if cfg.lowercase_ascii { c.to_ascii_lowercase() } else { c })
        .collect()
}

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = (prev[j] + usize::from(x != y)).min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CerCounts {
    pub errors: usize,
    pub ref_units: usize,
}

impl CerCounts {
    pub fn cer(&self) -> Result<f64, MetricsError> {
        if self.ref_units == 0 {
            return Err(MetricsError::EmptyReference);
        }
        Ok(100.0 * self.errors as f64 / self.ref_units as f64)
    }
}

impl std::ops::AddAssign for CerCounts {
    fn add_assign(&mut self, o: Self) {
        self.errors += o.errors;
        self.ref_units += o.ref_units;
    }
}

pub fn cer_counts(reference: &str, hyp: &str, cfg: &CerConfig) -> CerCounts {
    let r = cer_units(reference, cfg);
    let h = cer_units(hyp, cfg);
    CerCounts {
        errors: edit_distance(&r, &h),
        ref_units: r.len(),
    }
}

/// Edit distance over reference length, in percent; may exceed 100.
pub fn cer(reference: &str, hyp: &str) -> Result<f64, MetricsError> {
    cer_with(reference, hyp, &CerConfig::default())
}

pub fn cer_with(reference: &str, hyp: &str, cfg: &CerConfig) -> Result<f64, MetricsError> {
    cer_counts(reference, hyp, cfg).cer()
}

/// Errors pooled over all utterances of one test set.
pub fn corpus_cer<'a, I>(pairs: I, cfg: &CerConfig) -> Result<f64, MetricsError>
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let mut total = CerCounts::default();
    for (r, h) in pairs {
        total += cer_counts(r, h, cfg);
    }
    total.cer()
}

/// Unweighted mean over test sets.
pub fn macro_average(values: &[f64]) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Round half away from zero at `decimals` places. Values within a relative
/// 1e-9 of a half step count as the half step.
pub fn round_half_up(x: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    let v = x.abs() * scale;
    let r = (v + 0.5 + 1e-9 * v.max(1.0)).floor();
    r.copysign(x) / scale
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PrfReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl PrfReport {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = pct(tp, tp + fp);
        let recall = pct(tp, tp + fn_);
        Self {
            precision,
            recall,
            f1: harmonic(precision, recall),
            tp,
            fp,
            fn_,
        }
    }
}

/// Classes pooled into the overall punctuation score.
pub const OVERALL_PUNC_CLASSES: [PuncTag; 3] = [PuncTag::Comma, PuncTag::Period, PuncTag::Question];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PuncReport {
    pub overall: PrfReport,
    pub per_class: BTreeMap<PuncTag, PrfReport>,
}

/// Micro P/R/F1 per mark and pooled over comma, period and question.
/// `none` is never counted.
pub fn punc_prf(reference: &[PuncTag], hyp: &[PuncTag]) -> Result<PuncReport, MetricsError> {
    check_len(reference.len(), hyp.len())?;
    let mut counts: BTreeMap<PuncTag, (usize, usize, usize)> = PuncTag::ALL[1..].iter().map(|&t| (t, (0, 0, 0))).collect();
    for (&r, &h) in reference.iter().zip(hyp) {
        if r == h {
            if let Some(c) = counts.get_mut(&r) {
                c.0 += 1;
            }
            continue;
        }
        if let Some(c) = counts.get_mut(&h) {
            c.1 += 1;
        }
        if let Some(c) = counts.get_mut(&r) {
            c.2 += 1;
        }
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for t in OVERALL_PUNC_CLASSES {
        let c = counts[&t];
        tp += c.0;
        fp += c.1;
        fn_ += c.2;
    }
    Ok(PuncReport {
        overall: PrfReport::from_counts(tp, fp, fn_),
        per_class: counts.into_iter().map(|(t, (a, b, c))| (t, PrfReport::from_counts(a, b, c))).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LidGranularity {
    Language,
    Dialect,
}

/// Exact-match rate. At dialect granularity both the language and the
/// (possibly absent) dialect must agree.
pub fn lid_accuracy(refs: &[LidResult], hyps: &[LidResult], granularity: LidGranularity) -> Result<f64, MetricsError> {
    check_len(refs.len(), hyps.len())?;
    if refs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let hits = refs
        .iter()
        .zip(hyps)
        .filter(|(r, h)| {
            r.language == h.language && (granularity == LidGranularity::Language || r.dialect == h.dialect)
        })
        .count();
    Ok(pct(hits, refs.len()))
}
