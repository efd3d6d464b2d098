//! Posterior tracks to time segments.
//!
//! Offline: smooth, threshold, run a minimum-duration state machine, then
//! refine (merge short gaps, split long segments, pad). Streaming: the same
//! state machine fed one frame at a time, emitting start/end events.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dfsmn::{PosteriorTrack, MVAD_CHANNELS, VAD_CHANNEL};

#[derive(Debug, Error)]
pub enum VadPostError {
    #[error("invalid postprocess config: {0}")]
    InvalidConfig(String),
    #[error("smoothing window must be odd and >= 1, got {0}")]
    BadWindow(usize),
    #[error("missing channel {0}")]
    MissingChannel(String),
    #[error("expected a single-channel track, got {0} channels")]
    NotSingleChannel(usize),
    #[error("invalid segment [{start}, {end})")]
    InvalidSegment { start: f64, end: f64 },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessConfig {
    pub smooth_window_frames: usize,
    pub threshold: f64,
    pub min_voice_ms: f64,
    pub min_silence_ms: f64,
    pub merge_gap_ms: f64,
    pub pad_ms: f64,
    pub max_segment_ms: f64,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self {
            smooth_window_frames: 5,
            threshold: 0.5,
            min_voice_ms: 100.0,
            min_silence_ms: 200.0,
            merge_gap_ms: 300.0,
            pad_ms: 100.0,
            max_segment_ms: 30_000.0,
        }
    }
}

impl PostprocessConfig {
    pub fn validate(&self) -> Result<(), VadPostError> {
        if self.smooth_window_frames == 0 || self.smooth_window_frames % 2 == 0 {
            return Err(VadPostError::BadWindow(self.smooth_window_frames));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(VadPostError::InvalidConfig("threshold must lie in (0, 1)".into()));
        }
        let durations = [
            self.min_voice_ms,
            self.min_silence_ms,
            self.merge_gap_ms,
            self.pad_ms,
            self.max_segment_ms,
        ];
        if durations.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(VadPostError::InvalidConfig("durations must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Frames a run must last to satisfy `ms`; never less than one.
fn frames_for(ms: f64, shift_s: f64) -> usize {
    ((ms / (shift_s * 1000.0)) - 1e-9).ceil().max(1.0) as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    #[serde(rename = "start")]
    pub start_s: f64,
    #[serde(rename = "end")]
    pub end_s: f64,
    pub label: String,
}

impl Segment {
    pub fn new(start_s: f64, end_s: f64, label: impl Into<String>) -> Result<Self, VadPostError> {
        if !(start_s >= 0.0 && start_s < end_s && end_s.is_finite()) {
            return Err(VadPostError::InvalidSegment { start: start_s, end: end_s });
        }
        Ok(Self {
            start_s,
            end_s,
            label: label.into(),
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

/// Centred moving average with a window that shrinks at the edges.
pub fn smooth_values(values: &[f64], window: usize) -> Result<Vec<f64>, VadPostError> {
    if window == 0 || window % 2 == 0 {
        return Err(VadPostError::BadWindow(window));
    }
    let half = window / 2;
    let mut prefix = Vec::with_capacity(values.len() + 1);
    prefix.push(0.0);
    for v in values {
        prefix.push(prefix.last().unwrap() + v);
    }
    Ok((0..values.len())
        .map(|t| {
            let lo = t.saturating_sub(half);
            let hi = (t + half + 1).min(values.len());
            // Sum directly for short windows so constant runs stay exact.
            if hi - lo <= 64 {
                values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
            } else {
                (prefix[hi] - prefix[lo]) / (hi - lo) as f64
            }
        })
        .collect())
}

pub fn smooth(track: &PosteriorTrack, window: usize) -> Result<PosteriorTrack, VadPostError> {
    let mut values = track.values().clone();
    for k in 0..track.num_channels() {
        let s = smooth_values(&track.channel(k), window)?;
        values.column_mut(k).iter_mut().zip(s).for_each(|(d, v)| *d = v);
    }
    Ok(PosteriorTrack::new(values, track.frame_shift_s(), track.channel_names().to_vec())
        .expect("averages of valid posteriors are valid"))
}

/// `p >= threshold` per frame.
pub fn binarize(values: &[f64], threshold: f64) -> Vec<bool> {
    values.iter().map(|&p| p >= threshold).collect()
}

/// Voiced frame ranges `[start, end)` from run lengths. A voice run opens a
/// segment only if it lasts `min_voice`; once open, silence shorter than
/// `min_silence` is absorbed. An open segment at the end closes at the
/// trailing silence onset, or at the last frame.
fn voiced_ranges(decisions: &[bool], cfg: &PostprocessConfig, shift_s: f64) -> Vec<(usize, usize)> {
    let need_voice = frames_for(cfg.min_voice_ms, shift_s);
    let need_silence = frames_for(cfg.min_silence_ms, shift_s);
    let mut runs: Vec<(bool, usize, usize)> = Vec::new();
    for (t, &d) in decisions.iter().enumerate() {
        match runs.last_mut() {
            Some((v, _, len)) if *v == d => *len += 1,
            _ => runs.push((d, t, 1)),
        }
    }
    let mut out = Vec::new();
    let mut open: Option<usize> = None;
    for &(voiced, start, len) in &runs {
        match (voiced, open) {
            (true, None) if len >= need_voice => open = Some(start),
            (false, Some(s)) if len >= need_silence => {
                out.push((s, start));
                open = None;
            }
            _ => {}
        }
    }
    if let Some(s) = open {
        let end = match runs.last() {
            Some(&(false, start, _)) => start,
            _ => decisions.len(),
        };
        out.push((s, end));
    }
    out
}

fn to_segments(ranges: &[(usize, usize)], shift_s: f64, label: &str) -> Vec<Segment> {
    ranges
        .iter()
        .map(|&(a, b)| Segment {
            start_s: a as f64 * shift_s,
            end_s: b as f64 * shift_s,
            label: label.to_string(),
        })
        .collect()
}

/// Duration-constrained segmentation of frame decisions, labelled `voice`.
pub fn segments_from_decisions(decisions: &[bool], cfg: &PostprocessConfig, frame_shift_s: f64) -> Vec<Segment> {
    to_segments(&voiced_ranges(decisions, cfg, frame_shift_s), frame_shift_s, VAD_CHANNEL)
}

fn min_index(values: &[f64], lo: usize, hi: usize) -> usize {
    (lo..=hi).fold(lo, |best, t| if values[t] < values[best] { t } else { best })
}

fn split_range(range: (usize, usize), smoothed: &[f64], max_frames: f64, out: &mut Vec<(usize, usize)>) {
    let (a, b) = range;
    let n = b - a;
    if (n as f64) <= max_frames || n < 2 {
        out.push(range);
        return;
    }
    let lo = (a + (0.2 * n as f64).ceil() as usize).max(a + 1);
    let hi = (a + (0.8 * n as f64).floor() as usize).min(b - 1);
    if lo > hi {
        out.push(range);
        return;
    }
    let f = min_index(smoothed, lo, hi);
    split_range((a, f), smoothed, max_frames, out);
    split_range((f, b), smoothed, max_frames, out);
}

/// Merge, split and pad `segments` against the posterior channel they came
/// from.
///
/// Segments are first snapped to the hull of the state-machine segments of
/// `posteriors` they overlap; segments overlapping none are dropped. Padding
/// stops at the midpoint of a gap narrower than twice the pad, and at
/// `[0, len * shift]`. Snapping makes the operation idempotent.
pub fn refine_segments(
    segments: &[Segment],
    cfg: &PostprocessConfig,
    posteriors: &[f64],
    frame_shift_s: f64,
) -> Result<Vec<Segment>, VadPostError> {
    cfg.validate()?;
    let Some(label) = segments.first().map(|s| s.label.clone()) else {
        return Ok(Vec::new());
    };
    let smoothed = smooth_values(posteriors, cfg.smooth_window_frames)?;
    let support = voiced_ranges(&binarize(&smoothed, cfg.threshold), cfg, frame_shift_s);
    let t = |f: usize| f as f64 * frame_shift_s;

    let mut hulls: Vec<(usize, usize)> = segments
        .iter()
        .filter_map(|seg| {
            let hit: Vec<&(usize, usize)> = support
                .iter()
                .filter(|&&(a, b)| seg.start_s < t(b) && t(a) < seg.end_s)
                .collect();
            Some((hit.first()?.0, hit.last()?.1))
        })
        .collect();
    hulls.sort_unstable();

    let merge_frames = cfg.merge_gap_ms / (frame_shift_s * 1000.0);
    let mut merged: Vec<(usize, usize)> = Vec::new();
    for h in hulls {
        match merged.last_mut() {
            Some(last) if h.0 <= last.1 || ((h.0 - last.1) as f64) < merge_frames - 1e-9 => {
                last.1 = last.1.max(h.1);
            }
            _ => merged.push(h),
        }
    }

    let max_frames = cfg.max_segment_ms / (frame_shift_s * 1000.0) + 1e-9;
    let mut pieces = Vec::new();
    for r in merged {
        split_range(r, &smoothed, max_frames, &mut pieces);
    }

    let total = t(posteriors.len());
    let pad = cfg.pad_ms / 1000.0;
    let bounds: Vec<(f64, f64)> = pieces.iter().map(|&(a, b)| (t(a), t(b))).collect();
    Ok(bounds
        .iter()
        .enumerate()
        .map(|(i, &(s, e))| {
            let floor = if i > 0 { (bounds[i - 1].1 + s) / 2.0 } else { 0.0 };
            let ceil = bounds.get(i + 1).map_or(total, |n| (e + n.0) / 2.0).min(total);
            Segment {
                start_s: (s - pad).max(floor).max(0.0),
                end_s: (e + pad).min(ceil),
                label: label.clone(),
            }
        })
        .collect())
}

fn single_channel(track: &PosteriorTrack) -> Result<Vec<f64>, VadPostError> {
    if track.num_channels() != 1 {
        return Err(VadPostError::NotSingleChannel(track.num_channels()));
    }
    Ok(track.channel(0))
}

fn channel_segments(values: &[f64], shift_s: f64, cfg: &PostprocessConfig, label: &str) -> Result<Vec<Segment>, VadPostError> {
    cfg.validate()?;
    let smoothed = smooth_values(values, cfg.smooth_window_frames)?;
    let ranges = voiced_ranges(&binarize(&smoothed, cfg.threshold), cfg, shift_s);
    let raw = to_segments(&ranges, shift_s, label);
    refine_segments(&raw, cfg, values, shift_s)
}

/// Full offline chain on a single-channel VAD track.
pub fn vad_segments(track: &PosteriorTrack, cfg: &PostprocessConfig) -> Result<Vec<Segment>, VadPostError> {
    let values = single_channel(track)?;
    channel_segments(&values, track.frame_shift_s(), cfg, VAD_CHANNEL)
}

/// Unrefined state-machine segments of a single-channel track.
pub fn fsm_segments(track: &PosteriorTrack, cfg: &PostprocessConfig) -> Result<Vec<Segment>, VadPostError> {
    cfg.validate()?;
    let values = single_channel(track)?;
    let smoothed = smooth_values(&values, cfg.smooth_window_frames)?;
    Ok(segments_from_decisions(&binarize(&smoothed, cfg.threshold), cfg, track.frame_shift_s()))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MvadConfig {
    pub speech: PostprocessConfig,
    pub singing: PostprocessConfig,
    pub music: PostprocessConfig,
}

impl MvadConfig {
    pub fn uniform(cfg: PostprocessConfig) -> Self {
        Self {
            speech: cfg.clone(),
            singing: cfg.clone(),
            music: cfg,
        }
    }

    pub fn for_event(&self, event: &str) -> Option<&PostprocessConfig> {
        match event {
            "speech" => Some(&self.speech),
            "singing" => Some(&self.singing),
            "music" => Some(&self.music),
            _ => None,
        }
    }
}

/// Segments per event. Events are independent and may overlap in time.
pub type EventSegments = BTreeMap<String, Vec<Segment>>;

pub fn mvad_segments(track: &PosteriorTrack, cfg: &MvadConfig) -> Result<EventSegments, VadPostError> {
    let mut out = EventSegments::new();
    for event in MVAD_CHANNELS {
        let k = track
            .channel_index(event)
            .ok_or_else(|| VadPostError::MissingChannel(event.to_string()))?;
        let ecfg = cfg.for_event(event).expect("known event");
        out.insert(
            event.to_string(),
            channel_segments(&track.channel(k), track.frame_shift_s(), ecfg, event)?,
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamEventKind {
    VoiceStart,
    VoiceEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamEvent {
    pub kind: StreamEventKind,
    pub time_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Silence,
    PendingVoice { onset: usize },
    Voice,
    PendingSilence { onset: usize },
}

/// Incremental hangover state machine. Works on raw frame decisions; there
/// is no smoothing, merging, padding or splitting in streaming mode.
#[derive(Debug, Clone)]
pub struct VadStream {
    need_voice: usize,
    need_silence: usize,
    threshold: f64,
    shift_s: f64,
    phase: Phase,
    frame: usize,
}

impl VadStream {
    pub fn new(cfg: &PostprocessConfig, frame_shift_s: f64) -> Result<Self, VadPostError> {
        cfg.validate()?;
        if !(frame_shift_s > 0.0) {
            return Err(VadPostError::InvalidConfig("frame shift must be positive".into()));
        }
        Ok(Self {
            need_voice: frames_for(cfg.min_voice_ms, frame_shift_s),
            need_silence: frames_for(cfg.min_silence_ms, frame_shift_s),
            threshold: cfg.threshold,
            shift_s: frame_shift_s,
            phase: Phase::Silence,
            frame: 0,
        })
    }

    pub fn frames_seen(&self) -> usize {
        self.frame
    }

    pub fn in_voice(&self) -> bool {
        matches!(self.phase, Phase::Voice | Phase::PendingSilence { .. })
    }

    fn at(&self, frame: usize) -> f64 {
        frame as f64 * self.shift_s
    }

    /// Feed one frame posterior.
    pub fn step(&mut self, posterior: f64) -> Option<StreamEvent> {
        self.step_decision(posterior >= self.threshold)
    }

    /// Feed one frame decision. Returns at most one event, back-dated to the
    /// onset of the run that triggered it.
    pub fn step_decision(&mut self, voiced: bool) -> Option<StreamEvent> {
        let t = self.frame;
        self.frame += 1;
        let run = |onset: usize| t + 1 - onset;
        let (next, event) = match (self.phase, voiced) {
            (Phase::Silence, false) => (Phase::Silence, None),
            (Phase::Silence, true) | (Phase::PendingVoice { .. }, true) => {
                let onset = match self.phase {
                    Phase::PendingVoice { onset } => onset,
                    _ => t,
                };
                if run(onset) >= self.need_voice {
                    (Phase::Voice, Some((StreamEventKind::VoiceStart, onset)))
                } else {
                    (Phase::PendingVoice { onset }, None)
                }
            }
            (Phase::PendingVoice { .. }, false) => (Phase::Silence, None),
            (Phase::Voice, true) | (Phase::PendingSilence { .. }, true) => (Phase::Voice, None),
            (Phase::Voice, false) | (Phase::PendingSilence { .. }, false) => {
                let onset = match self.phase {
                    Phase::PendingSilence { onset } => onset,
                    _ => t,
                };
                if run(onset) >= self.need_silence {
                    (Phase::Silence, Some((StreamEventKind::VoiceEnd, onset)))
                } else {
                    (Phase::PendingSilence { onset }, None)
                }
            }
        };
        self.phase = next;
        event.map(|(kind, f)| StreamEvent { kind, time_s: self.at(f) })
    }

    /// End of stream: closes an open segment, drops an unconfirmed onset.
    pub fn finish(&mut self) -> Option<StreamEvent> {
        let event = match self.phase {
            Phase::Voice => Some(self.at(self.frame)),
            Phase::PendingSilence { onset } => Some(self.at(onset)),
            _ => None,
        };
        self.phase = Phase::Silence;
        event.map(|time_s| StreamEvent {
            kind: StreamEventKind::VoiceEnd,
            time_s,
        })
    }
}

/// Pair start/end events into segments.
pub fn events_to_segments(events: &[StreamEvent]) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut start = None;
    for e in events {
        match e.kind {
            StreamEventKind::VoiceStart => start = Some(e.time_s),
            StreamEventKind::VoiceEnd => {
                if let Some(s) = start.take() {
                    out.push(Segment {
                        start_s: s,
                        end_s: e.time_s,
                        label: VAD_CHANNEL.to_string(),
                    });
                }
            }
        }
    }
    out
}

pub fn write_segments_jsonl<W: Write>(segments: &[Segment], mut w: W) -> Result<(), VadPostError> {
    for s in segments {
        serde_json::to_writer(&mut w, s).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_segments_tsv<W: Write>(segments: &[Segment], mut w: W) -> Result<(), VadPostError> {
    for s in segments {
        writeln!(w, "{}\t{}", s.start_s, s.end_s)?;
    }
    Ok(())
}

fn parse_err(line: usize, msg: impl Into<String>) -> VadPostError {
    VadPostError::Parse { line, msg: msg.into() }
}

pub fn read_segments_jsonl<R: BufRead>(r: R) -> Result<Vec<Segment>, VadPostError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Segment = serde_json::from_str(&line).map_err(|e| parse_err(i + 1, e.to_string()))?;
        out.push(Segment::new(s.start_s, s.end_s, s.label).map_err(|e| parse_err(i + 1, e.to_string()))?);
    }
    Ok(out)
}

/// `start<TAB>end[<TAB>label]` per line; the label defaults to `voice`.
pub fn read_segments_tsv<R: BufRead>(r: R) -> Result<Vec<Segment>, VadPostError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        if !(2..=3).contains(&cols.len()) {
            return Err(parse_err(i + 1, "expected 2 or 3 tab-separated columns"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| parse_err(i + 1, format!("{s:?}: {e}")));
        let label = cols.get(2).copied().unwrap_or(VAD_CHANNEL);
        out.push(Segment::new(num(cols[0])?, num(cols[1])?, label).map_err(|e| parse_err(i + 1, e.to_string()))?);
    }
    Ok(out)
}

/// Picks the reader from the file extension (`.tsv` or JSON lines).
pub fn read_segments_file(path: impl AsRef<std::path::Path>) -> Result<Vec<Segment>, VadPostError> {
    let path = path.as_ref();
    let r = std::io::BufReader::new(std::fs::File::open(path)?);
    if path.extension().is_some_and(|e| e == "tsv") {
        read_segments_tsv(r)
    } else {
        read_segments_jsonl(r)
    }
}
