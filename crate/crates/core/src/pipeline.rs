//! VAD, per-segment LID, transcription and punctuation over one recording.
//! Every timestamp in the output is on the timeline of the input waveform.

use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::audio::{AudioBuffer, AudioError};
use crate::ctc_align::{merge_words, CtcError, TokenSpan};
use crate::decode::{geometric_confidence, lid_decode, ConfidenceConfig, DecodeError, LidRegistry, LidResult, TableScorer};
use crate::dfsmn::{DfsmnError, DfsmnModel, PosteriorTrack};
use crate::features::{apply_cmvn, compute_fbank, CmvnStats, FbankConfig, FeatureError};
use crate::punc::{apply_tags, tag, LanguageStyle, PuncError, PuncTag, PuncTagger, TaggedText};
use crate::text::is_cjk_str;
use crate::vad_post::{vad_segments, PostprocessConfig, Segment, VadPostError};

pub const OUTPUT_SCHEMA_VERSION: u32 = 1;
const SPAN_TOLERANCE_S: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Dfsmn(#[from] DfsmnError),
    #[error(transparent)]
    VadPost(#[from] VadPostError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Ctc(#[from] CtcError),
    #[error(transparent)]
    Punc(#[from] PuncError),
    #[error("component contract violated: {0}")]
    Contract(String),
    #[error("segment {index} [{start_s}, {end_s}]: {source}")]
    Segment {
        index: usize,
        start_s: f64,
        end_s: f64,
        #[source]
        source: Box<PipelineError>,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn contract(msg: impl Into<String>) -> PipelineError {
    PipelineError::Contract(msg.into())
}

/// Where a cropped segment sits in the recording.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentContext {
    pub index: usize,
    pub start_s: f64,
    pub end_s: f64,
}

pub trait VoiceDetector: Send + Sync {
    fn detect(&self, audio: &AudioBuffer) -> Result<Vec<Segment>, PipelineError>;
}

pub trait LanguageIdentifier: Send + Sync {
    fn identify(&self, segment: &AudioBuffer, ctx: &SegmentContext) -> Result<LidResult, PipelineError>;
}

/// Recognizer output for one segment. Spans are relative to the segment start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriberOutput {
    pub tokens: Vec<String>,
    pub posteriors: Vec<f64>,
    #[serde(default)]
    pub spans: Option<Vec<TokenSpan>>,
}

pub trait Transcriber: Send + Sync {
    fn transcribe(&self, segment: &AudioBuffer, ctx: &SegmentContext) -> Result<TranscriberOutput, PipelineError>;
    fn supports_timestamps(&self) -> bool;
}

/// DFSMN posteriors from log-Mel features, then offline post-processing.
pub struct DfsmnVad {
    pub model: DfsmnModel,
    pub fbank: FbankConfig,
    pub cmvn: Option<CmvnStats>,
    pub post: PostprocessConfig,
}

impl DfsmnVad {
    pub fn posteriors(&self, audio: &AudioBuffer) -> Result<PosteriorTrack, PipelineError> {
        let mut feats = compute_fbank(audio, &self.fbank)?;
        if let Some(stats) = &self.cmvn {
            feats = apply_cmvn(&feats, stats)?;
        }
        Ok(self.model.forward_full(&feats)?)
    }
}

impl VoiceDetector for DfsmnVad {
    fn detect(&self, audio: &AudioBuffer) -> Result<Vec<Segment>, PipelineError> {
        if audio.duration_s() * 1000.0 < self.fbank.window_ms {
            return Ok(Vec::new());
        }
        Ok(vad_segments(&self.posteriors(audio)?, &self.post)?)
    }
}

/// Precomputed posteriors, post-processed like a live model's.
pub struct FixedPosteriorVad {
    pub track: PosteriorTrack,
    pub post: PostprocessConfig,
}

impl VoiceDetector for FixedPosteriorVad {
    fn detect(&self, audio: &AudioBuffer) -> Result<Vec<Segment>, PipelineError> {
        let covered = self.track.num_frames() as f64 * self.track.frame_shift_s();
        if covered > audio.duration_s() + SPAN_TOLERANCE_S {
            return Err(contract(format!(
                "posteriors cover {covered} s of a {} s recording",
                audio.duration_s()
            )));
        }
        Ok(vad_segments(&self.track, &self.post)?)
    }
}

/// One table-driven scorer per segment index; the last one repeats.
pub struct TableLid {
    pub registry: &'static LidRegistry,
    pub scorers: Vec<TableScorer>,
    pub beam_size: usize,
}

impl LanguageIdentifier for TableLid {
    fn identify(&self, _segment: &AudioBuffer, ctx: &SegmentContext) -> Result<LidResult, PipelineError> {
        let scorer = self
            .scorers
            .get(ctx.index)
            .or(self.scorers.last())
            .ok_or_else(|| contract("table LID has no scorers"))?;
        Ok(lid_decode(scorer, self.registry, self.beam_size)?)
    }
}

/// Canned outputs by segment index; missing indices yield an empty result.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LookupTranscriber {
    pub outputs: Vec<TranscriberOutput>,
}

impl Transcriber for LookupTranscriber {
    fn transcribe(&self, _segment: &AudioBuffer, ctx: &SegmentContext) -> Result<TranscriberOutput, PipelineError> {
        Ok(self.outputs.get(ctx.index).cloned().unwrap_or(TranscriberOutput {
            tokens: Vec::new(),
            posteriors: Vec::new(),
            spans: self.supports_timestamps().then(Vec::new),
        }))
    }

    fn supports_timestamps(&self) -> bool {
        self.outputs.iter().all(|o| o.spans.is_some())
    }
}

pub struct Components<'a> {
    pub vad: &'a dyn VoiceDetector,
    pub lid: Option<&'a dyn LanguageIdentifier>,
    pub transcriber: &'a dyn Transcriber,
    pub tagger: Option<&'a (dyn PuncTagger + Sync)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub confidence: ConfidenceConfig,
    /// Worker threads for per-segment work; output order is unaffected.
    pub jobs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            confidence: ConfidenceConfig::default(),
            jobs: 1,
        }
    }
}

fn rounded<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(round6(*x))
}

fn rounded_opt<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match x {
        Some(v) => s.serialize_some(&round6(*v)),
        None => s.serialize_none(),
    }
}

/// Nearest multiple of 1e-6, with negative zero folded to zero.
pub fn round6(x: f64) -> f64 {
    let r = (x * 1e6).round() / 1e6;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordTiming {
    pub w: String,
    #[serde(serialize_with = "rounded")]
    pub start: f64,
    #[serde(serialize_with = "rounded")]
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub text: String,
    #[serde(serialize_with = "rounded")]
    pub start: f64,
    #[serde(serialize_with = "rounded")]
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentResult {
    #[serde(rename = "start", serialize_with = "rounded")]
    pub start_s: f64,
    #[serde(rename = "end", serialize_with = "rounded")]
    pub end_s: f64,
    pub text: String,
    #[serde(serialize_with = "rounded")]
    pub asr_confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dialect: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none", serialize_with = "rounded_opt")]
    pub lid_confidence: Option<f64>,
    #[serde(rename = "words", default, skip_serializing_if = "Option::is_none")]
    pub word_spans: Option<Vec<WordTiming>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VadSpan {
    #[serde(serialize_with = "rounded")]
    pub start: f64,
    #[serde(serialize_with = "rounded")]
    pub end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AudioInfo {
    #[serde(serialize_with = "rounded")]
    pub duration_s: f64,
    pub sample_rate: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptionResult {
    pub version: u32,
    pub audio: AudioInfo,
    pub text: String,
    pub segments: Vec<SegmentResult>,
    pub vad: Vec<VadSpan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentences: Option<Vec<Sentence>>,
}

impl TranscriptionResult {
    /// Two-space indented JSON, times rounded to 1e-6, trailing newline.
    pub fn to_canonical_json(&self) -> Result<String, PipelineError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Split after period, question and exclamation tags. Trailing words with
/// no sentence-final tag form the last sentence.
pub fn sentence_timestamps(
    words: &[WordTiming],
    tags: &[PuncTag],
    style: LanguageStyle,
) -> Result<Vec<Sentence>, PipelineError> {
    if words.len() != tags.len() {
        return Err(PuncError::LengthMismatch {
            tokens: words.len(),
            tags: tags.len(),
        }
        .into());
    }
    let mut out = Vec::new();
    let mut begin = 0;
    for i in 0..words.len() {
        let last = i + 1 == words.len();
        if matches!(tags[i], PuncTag::Period | PuncTag::Question | PuncTag::Exclamation) || last {
            let members = &words[begin..=i];
            let text = apply_tags(&TaggedText {
                tokens: members.iter().map(|w| w.w.clone()).collect(),
                tags: tags[begin..=i].to_vec(),
                language_style: style,
            })?;
            out.push(Sentence {
                text,
                start: members.iter().map(|w| w.start).fold(f64::INFINITY, f64::min),
                end: members.iter().map(|w| w.end).fold(f64::NEG_INFINITY, f64::max),
            });
            begin = i + 1;
        }
    }
    Ok(out)
}

/// Word grouping of recognizer tokens, reusing the CTC word merger.
fn group_words(tokens: &[String], spans: Option<&[TokenSpan]>) -> Result<Vec<(String, f64, f64)>, PipelineError> {
    let owned;
    let spans = match spans {
        Some(s) => s,
        None => {
            owned = tokens
                .iter()
                .map(|t| TokenSpan {
                    token_id: 0,
                    token_text: t.clone(),
                    start_s: 0.0,
                    end_s: 0.0,
                })
                .collect::<Vec<_>>();
            &owned
        }
    };
    Ok(merge_words(spans)?
        .into_iter()
        .map(|w| (w.text, w.start_s, w.end_s))
        .collect())
}

fn check_output(out: &TranscriberOutput, duration_s: f64, wants_spans: bool) -> Result<(), PipelineError> {
    if out.posteriors.len() != out.tokens.len() {
        return Err(contract(format!(
            "{} posteriors for {} tokens",
            out.posteriors.len(),
            out.tokens.len()
        )));
    }
    match (&out.spans, wants_spans) {
        (None, true) => return Err(contract("transcriber declares timestamps but returned none")),
        (Some(_), false) => return Err(contract("transcriber returned timestamps it does not declare")),
        _ => {}
    }
    if let Some(spans) = &out.spans {
        if spans.len() != out.tokens.len() {
            return Err(contract(format!("{} spans for {} tokens", spans.len(), out.tokens.len())));
        }
        let mut prev_start = 0.0;
        for (s, t) in spans.iter().zip(&out.tokens) {
            if s.token_text != *t {
                return Err(contract(format!("span text {:?} differs from token {t:?}", s.token_text)));
            }
            if !(s.start_s >= prev_start - SPAN_TOLERANCE_S
                && s.start_s <= s.end_s
                && s.end_s <= duration_s + SPAN_TOLERANCE_S)
            {
                return Err(contract(format!(
                    "span [{}, {}] out of order or outside [0, {duration_s}]",
                    s.start_s, s.end_s
                )));
            }
            prev_start = s.start_s;
        }
    }
    Ok(())
}

struct SegmentWork {
    result: SegmentResult,
    sentences: Vec<Sentence>,
    style: LanguageStyle,
}

fn process_segment(
    audio: &AudioBuffer,
    seg: &Segment,
    index: usize,
    c: &Components<'_>,
    cfg: &PipelineConfig,
) -> Result<SegmentWork, PipelineError> {
    let ctx = SegmentContext {
        index,
        start_s: seg.start_s,
        end_s: seg.end_s,
    };
    let clip = audio.crop(seg.start_s, seg.end_s)?;
    let lid = c.lid.map(|l| l.identify(&clip, &ctx)).transpose()?;
    let wants_spans = c.transcriber.supports_timestamps();
    let out = c.transcriber.transcribe(&clip, &ctx)?;
    check_output(&out, seg.duration_s(), wants_spans)?;
    let confidence = geometric_confidence(&out.posteriors, &cfg.confidence)?;

    let words = group_words(&out.tokens, out.spans.as_deref())?;
    let style = if words.iter().any(|(w, _, _)| is_cjk_str(w)) {
        LanguageStyle::ChineseFullwidth
    } else {
        LanguageStyle::EnglishHalfwidth
    };
    let texts: Vec<String> = words.iter().map(|(w, _, _)| w.clone()).collect();
    let tags = match (c.tagger, texts.is_empty()) {
        (Some(t), false) => tag(t, &texts)?,
        _ => vec![PuncTag::None; texts.len()],
    };
    let text = apply_tags(&TaggedText::new(texts, tags.clone(), style)?)?;

    let timings: Option<Vec<WordTiming>> = out.spans.as_ref().map(|_| {
        words
            .iter()
            .map(|(w, a, b)| WordTiming {
                w: w.clone(),
                start: (seg.start_s + a).min(seg.end_s),
                end: (seg.start_s + b).min(seg.end_s),
            })
            .collect()
    });
    let sentences = match &timings {
        Some(t) => sentence_timestamps(t, &tags, style)?,
        None => Vec::new(),
    };
    Ok(SegmentWork {
        result: SegmentResult {
            start_s: seg.start_s,
            end_s: seg.end_s,
            text,
            asr_confidence: confidence.value,
            language: lid.as_ref().map(|l| l.language.clone()),
            dialect: lid.as_ref().and_then(|l| l.dialect.clone()),
            lid_confidence: lid.as_ref().map(|l| l.confidence),
            word_spans: timings,
        },
        sentences,
        style,
    })
}

/// Run the whole stack over one recording.
pub fn transcribe(audio: &AudioBuffer, c: &Components<'_>, cfg: &PipelineConfig) -> Result<TranscriptionResult, PipelineError> {
    let duration = audio.duration_s();
    let mut vad = c.vad.detect(audio)?;
    for s in &mut vad {
        s.end_s = s.end_s.min(duration);
    }
    vad.retain(|s| s.end_s > s.start_s);

    let run = |(i, seg): (usize, &Segment)| {
        process_segment(audio, seg, i, c, cfg).map_err(|e| PipelineError::Segment {
            index: i,
            start_s: seg.start_s,
            end_s: seg.end_s,
            source: Box::new(e),
        })
    };
    let concurrent = c.tagger.is_none_or(|t| t.supports_concurrent_calls());
    let work: Vec<SegmentWork> = if cfg.jobs > 1 && concurrent {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| contract(format!("thread pool: {e}")))?;
        pool.install(|| vad.par_iter().enumerate().map(run).collect::<Result<_, _>>())?
    } else {
        vad.iter().enumerate().map(run).collect::<Result<_, _>>()?
    };

    let mut text = String::new();
    let mut prev_style = None;
    for w in work.iter().filter(|w| !w.result.text.is_empty()) {
        if prev_style == Some(LanguageStyle::EnglishHalfwidth) && w.style == LanguageStyle::EnglishHalfwidth {
            text.push(' ');
        }
        text.push_str(&w.result.text);
        prev_style = Some(w.style);
    }
    let sentences = c
        .transcriber
        .supports_timestamps()
        .then(|| work.iter().flat_map(|w| w.sentences.iter().cloned()).collect());
    Ok(TranscriptionResult {
        version: OUTPUT_SCHEMA_VERSION,
        audio: AudioInfo {
            duration_s: duration,
            sample_rate: audio.sample_rate(),
        },
        text,
        segments: work.into_iter().map(|w| w.result).collect(),
        vad: vad.iter().map(|s| VadSpan { start: s.start_s, end: s.end_s }).collect(),
        sentences,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wt(w: &str, a: f64, b: f64) -> WordTiming {
        WordTiming { w: w.into(), start: a, end: b }
    }

    #[test]
    fn sentences_split_on_final_marks() {
        use PuncTag::*;
        let words = [wt("a", 0.0, 0.5), wt("b", 0.5, 1.0), wt("c", 1.2, 1.4), wt("d", 1.5, 2.0)];
        let s = sentence_timestamps(&words, &[None, Period, None, Period], LanguageStyle::EnglishHalfwidth).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].text.as_str(), s[0].start, s[0].end), ("a b.", 0.0, 1.0));
        assert_eq!((s[1].text.as_str(), s[1].start, s[1].end), ("c d.", 1.2, 2.0));
        let s = sentence_timestamps(&words, &[Comma, None, Comma, None], LanguageStyle::EnglishHalfwidth).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].start, s[0].end), (0.0, 2.0));
        assert!(sentence_timestamps(&words, &[None], LanguageStyle::EnglishHalfwidth).is_err());
    }

    #[test]
    fn rounding() {
        assert_eq!(round6(2.9 + 0.3), 3.2);
        assert_eq!(round6(-1e-9).to_string(), "0");
        assert_eq!(round6(1.23456789), 1.234568);
    }
}
