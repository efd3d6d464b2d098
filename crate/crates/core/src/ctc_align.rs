//! CTC forced alignment and token/word timestamps.
//!
//! The state graph interleaves blanks with the target tokens (`2L + 1`
//! states). Scores are kept in the log domain, with [`LOG_ZERO`] standing in
//! for log 0 so that arithmetic never produces NaN.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::is_cjk_str;

pub const BLANK_ID: usize = 0;
/// Log-probability of an unreachable state.
pub const LOG_ZERO: f64 = -1e30;
/// Subword marker opening a new word.
pub const WORD_START: char = '\u{2581}';

const LOGITS_MAGIC: &[u8; 4] = b"CTCL";
pub const LOGITS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CtcError {
    #[error("token sequence is empty")]
    EmptyTokens,
    #[error("token {0} is the blank id")]
    BlankInTokens(usize),
    #[error("token id {id} outside vocabulary of {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error("{frames} frames cannot align {tokens} tokens (need at least {needed})")]
    Infeasible {
        frames: usize,
        tokens: usize,
        needed: usize,
    },
    #[error("invalid CTC frames: {0}")]
    InvalidFrames(String),
    #[error("word grouping: {0}")]
    Grouping(String),
    #[error("unknown token id {0}")]
    UnknownToken(usize),
    #[error("logits file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Log posteriors for each encoder frame; row `t` covers
/// `[t * frame_shift_s, (t + 1) * frame_shift_s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CtcFrames {
    log_probs: Array2<f64>,
    frame_shift_s: f64,
}

/// Encoder frame shift for a feature shift and subsampling factor.
pub fn encoder_frame_shift(feature_shift_s: f64, subsampling: usize) -> f64 {
    feature_shift_s * subsampling as f64
}

fn log_softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.axis_iter_mut(Axis(0)) {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
}

impl CtcFrames {
    /// Rows must be finite and normalized (log-sum-exp within 1e-6 of 0).
    pub fn new(log_probs: Array2<f64>, frame_shift_s: f64) -> Result<Self, CtcError> {
        if log_probs.ncols() < 2 {
            return Err(CtcError::InvalidFrames("vocabulary needs blank plus one token".into()));
        }
        if !(frame_shift_s > 0.0) {
            return Err(CtcError::InvalidFrames("frame shift must be positive".into()));
        }
        if log_probs.iter().any(|v| !v.is_finite()) {
            return Err(CtcError::InvalidFrames("non-finite log-probability".into()));
        }
        for (t, row) in log_probs.axis_iter(Axis(0)).enumerate() {
            let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
            if lse.abs() > 1e-6 {
                return Err(CtcError::InvalidFrames(format!("row {t} is not normalized (lse {lse})")));
            }
        }
        Ok(Self {
            log_probs,
            frame_shift_s,
        })
    }

    /// Normalize raw logits with a log-softmax per row.
    pub fn from_logits(mut logits: Array2<f64>, frame_shift_s: f64) -> Result<Self, CtcError> {
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(CtcError::InvalidFrames("non-finite logit".into()));
        }
        log_softmax_rows(&mut logits);
        Self::new(logits, frame_shift_s)
    }

    pub fn log_probs(&self) -> &Array2<f64> {
        &self.log_probs
    }

    pub fn frame_shift_s(&self) -> f64 {
        self.frame_shift_s
    }

    pub fn num_frames(&self) -> usize {
        self.log_probs.nrows()
    }

    pub fn vocab_size(&self) -> usize {
        self.log_probs.ncols()
    }
}

/// Shortest frame count that can emit `tokens`: one frame per token plus a
/// blank between each adjacent repeat.
pub fn min_frames(tokens: &[usize]) -> usize {
    tokens.len() + tokens.windows(2).filter(|w| w[0] == w[1]).count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub tokens: Vec<usize>,
    /// Extended-graph state per frame: even = blank, odd `2i + 1` = token `i`.
    pub states: Vec<usize>,
    pub log_prob: f64,
}

impl Alignment {
    /// Emitted label per frame (`BLANK_ID` for blank states).
    pub fn labels(&self) -> Vec<usize> {
        self.states
            .iter()
            .map(|&s| if s % 2 == 0 { BLANK_ID } else { self.tokens[s / 2] })
            .collect()
    }

    /// Token index per frame, `None` on blank frames.
    pub fn token_index(&self) -> Vec<Option<usize>> {
        self.states.iter().map(|&s| (s % 2 == 1).then_some(s / 2)).collect()
    }
}

/// Remove repeats, then blanks.
pub fn collapse(labels: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &l in labels {
        if Some(l) != prev && l != BLANK_ID {
            out.push(l);
        }
        prev = Some(l);
    }
    out
}

pub fn forced_align(frames: &CtcFrames, tokens: &[usize]) -> Result<Alignment, CtcError> {
    align_scores(frames.log_probs.view(), tokens)
}

/// Viterbi alignment over arbitrary per-frame scores (normalization is not
/// required). Among equal-scoring paths the one that reaches each token
/// earliest wins: backtracking prefers staying in the current state over
/// arriving from a lower one, and the final frame prefers the last token over
/// the trailing blank.
pub fn align_scores(scores: ArrayView2<f64>, tokens: &[usize]) -> Result<Alignment, CtcError> {
    if tokens.is_empty() {
        return Err(CtcError::EmptyTokens);
    }
    let vocab = scores.ncols();
    for &id in tokens {
        if id == BLANK_ID {
            return Err(CtcError::BlankInTokens(id));
        }
        if id >= vocab {
            return Err(CtcError::TokenOutOfRange { id, vocab });
        }
    }
    let t_len = scores.nrows();
    let needed = min_frames(tokens);
    if t_len < needed {
        return Err(CtcError::Infeasible {
            frames: t_len,
            tokens: tokens.len(),
            needed,
        });
    }

    let n_states = 2 * tokens.len() + 1;
    let label = |s: usize| if s % 2 == 0 { BLANK_ID } else { tokens[s / 2] };
    let score = |t: usize, s: usize| scores[[t, label(s)]].max(LOG_ZERO);
    let mut alpha = vec![LOG_ZERO; n_states];
    let mut back = vec![0u8; t_len * n_states];
    alpha[0] = score(0, 0);
    alpha[1] = score(0, 1);

    for t in 1..t_len {
        let mut next = vec![LOG_ZERO; n_states];
        for s in 0..n_states {
            let mut best = alpha[s];
            let mut step = 0u8;
            if s >= 1 && alpha[s - 1] > best {
                best = alpha[s - 1];
                step = 1;
            }
            if s >= 2 && s % 2 == 1 && tokens[s / 2] != tokens[s / 2 - 1] && alpha[s - 2] > best {
                best = alpha[s - 2];
                step = 2;
            }
            if best > LOG_ZERO / 2.0 {
                next[s] = best + score(t, s);
                back[t * n_states + s] = step;
            }
        }
        alpha = next;
    }

    let (last_tok, last_blank) = (n_states - 2, n_states - 1);
    let mut s = if alpha[last_blank] > alpha[last_tok] { last_blank } else { last_tok };
    let mut states = vec![0; t_len];
    for t in (0..t_len).rev() {
        states[t] = s;
        if t > 0 {
            s -= back[t * n_states + s] as usize;
        }
    }
    let log_prob = states
        .iter()
        .enumerate()
        .fold(0.0, |acc, (t, &s)| acc + scores[[t, label(s)]]);
    Ok(Alignment {
        tokens: tokens.to_vec(),
        states,
        log_prob,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenEntry {
    pub id: usize,
    pub text: String,
}

/// Id-to-text mapping, loaded from `{"tokens": [{"id", "text"}], "frame_shift_s"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenTable {
    pub tokens: Vec<TokenEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_shift_s: Option<f64>,
}

impl TokenTable {
    pub fn from_texts<S: AsRef<str>>(texts: &[S]) -> Self {
        Self {
            tokens: texts
                .iter()
                .enumerate()
                .map(|(id, t)| TokenEntry {
                    id,
                    text: t.as_ref().to_string(),
                })
                .collect(),
            frame_shift_s: None,
        }
    }

    pub fn text(&self, id: usize) -> Option<&str> {
        self.tokens.iter().find(|e| e.id == id).map(|e| e.text.as_str())
    }

    pub fn id(&self, text: &str) -> Option<usize> {
        self.tokens.iter().find(|e| e.text == text).map(|e| e.id)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CtcError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenSpan {
    pub token_id: usize,
    pub token_text: String,
    pub start_s: f64,
    pub end_s: f64,
}

/// One span per token, covering its contiguous emission frames.
pub fn token_timestamps(al: &Alignment, table: &TokenTable, frame_shift_s: f64) -> Result<Vec<TokenSpan>, CtcError> {
    let mut first = vec![usize::MAX; al.tokens.len()];
    let mut last = vec![0; al.tokens.len()];
    for (t, idx) in al.token_index().into_iter().enumerate() {
        if let Some(i) = idx {
            first[i] = first[i].min(t);
            last[i] = t;
        }
    }
    al.tokens
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            Ok(TokenSpan {
                token_id: id,
                token_text: table.text(id).ok_or(CtcError::UnknownToken(id))?.to_string(),
                start_s: first[i] as f64 * frame_shift_s,
                end_s: (last[i] + 1) as f64 * frame_shift_s,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordSpan {
    pub text: String,
    pub start_s: f64,
    pub end_s: f64,
    pub token_indices: Vec<usize>,
}

/// Group subword spans into words. A piece starting with `▁` opens a word, a
/// piece without it continues the previous word, and a Han-character token
/// is always a word of its own.
pub fn merge_words(spans: &[TokenSpan]) -> Result<Vec<WordSpan>, CtcError> {
    let mut words: Vec<WordSpan> = Vec::new();
    let mut can_continue = false;
    for (i, span) in spans.iter().enumerate() {
        let text = span.token_text.as_str();
        let body = text.strip_prefix(WORD_START);
        let piece = body.unwrap_or(text);
        if piece.is_empty() {
            return Err(CtcError::Grouping(format!("token {i} has no text")));
        }
        let fresh = WordSpan {
            text: piece.to_string(),
            start_s: span.start_s,
            end_s: span.end_s,
            token_indices: vec![i],
        };
        if is_cjk_str(piece) {
            words.push(fresh);
            can_continue = false;
        } else if body.is_some() {
            words.push(fresh);
            can_continue = true;
        } else if can_continue {
            let w = words.last_mut().expect("open word");
            w.text.push_str(piece);
            w.start_s = w.start_s.min(span.start_s);
            w.end_s = w.end_s.max(span.end_s);
            w.token_indices.push(i);
        } else {
            let why = if words.is_empty() { "at the start" } else { "after a Han character" };
            return Err(CtcError::Grouping(format!("continuation piece {piece:?} {why}")));
        }
    }
    Ok(words)
}

/// `CTCL`, u32 version, u32 frames, u32 vocab, then f32 LE row-major logits.
pub fn write_logits<W: Write>(logits: &Array2<f64>, mut w: W) -> Result<(), CtcError> {
    w.write_all(LOGITS_MAGIC)?;
    for v in [LOGITS_FORMAT_VERSION, logits.nrows() as u32, logits.ncols() as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in logits.iter() {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Raw logits as stored.
pub fn read_logits<R: Read>(mut r: R) -> Result<Array2<f64>, CtcError> {
    let mut head = [0u8; 16];
    r.read_exact(&mut head).map_err(|_| CtcError::Format("file shorter than header".into()))?;
    if &head[..4] != LOGITS_MAGIC {
        return Err(CtcError::Format("bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(head[i..i + 4].try_into().unwrap());
    if word(4) != LOGITS_FORMAT_VERSION {
        return Err(CtcError::Format(format!("version {} unsupported", word(4))));
    }
    let (t, v) = (word(8) as usize, word(12) as usize);
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != t * v * 4 {
        return Err(CtcError::Format(format!(
            "payload has {} bytes, expected {}",
            payload.len(),
            t * v * 4
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(Array2::from_shape_vec((t, v), data).expect("length checked"))
}

/// Load a logits dump and normalize it.
pub fn load_ctc_frames(path: impl AsRef<Path>, frame_shift_s: f64) -> Result<CtcFrames, CtcError> {
    let logits = read_logits(std::io::BufReader::new(std::fs::File::open(path)?))?;
    CtcFrames::from_logits(logits, frame_shift_s)
}
