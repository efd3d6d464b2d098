//! Punctuation tags, tag application and gold-tag extraction.

use std::collections::HashMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{is_cjk, is_cjk_str, is_punctuation};

#[derive(Debug, Error)]
pub enum PuncError {
    #[error("{tokens} tokens but {tags} tags")]
    LengthMismatch { tokens: usize, tags: usize },
    #[error("token {0} is empty")]
    EmptyToken(usize),
    #[error("no tokens to tag")]
    EmptyInput,
    #[error("tagger returned {got} tags for {expected} tokens")]
    TaggerLength { expected: usize, got: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mark inserted after a token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PuncTag {
    None,
    Comma,
    Period,
    Question,
    Exclamation,
}

impl PuncTag {
    pub const ALL: [PuncTag; 5] = [
        PuncTag::None,
        PuncTag::Comma,
        PuncTag::Period,
        PuncTag::Question,
        PuncTag::Exclamation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PuncTag::None => "none",
            PuncTag::Comma => "comma",
            PuncTag::Period => "period",
            PuncTag::Question => "question",
            PuncTag::Exclamation => "exclamation",
        }
    }

    pub fn mark(self, style: LanguageStyle) -> Option<char> {
        let (half, full) = match self {
            PuncTag::None => return None,
            PuncTag::Comma => (',', '，'),
            PuncTag::Period => ('.', '。'),
            PuncTag::Question => ('?', '？'),
            PuncTag::Exclamation => ('!', '！'),
        };
        Some(match style {
            LanguageStyle::EnglishHalfwidth => half,
            LanguageStyle::ChineseFullwidth => full,
        })
    }

    /// Either width is accepted.
    pub fn from_mark(c: char) -> Option<PuncTag> {
        match c {
            ',' | '，' => Some(PuncTag::Comma),
            '.' | '。' => Some(PuncTag::Period),
            '?' | '？' => Some(PuncTag::Question),
            '!' | '！' => Some(PuncTag::Exclamation),
            _ => None,
        }
    }
}

impl std::str::FromStr for PuncTag {
    type Err = PuncError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PuncTag::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| PuncError::Parse { line: 0, msg: format!("unknown tag {s:?}") })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LanguageStyle {
    ChineseFullwidth,
    EnglishHalfwidth,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedText {
    pub tokens: Vec<String>,
    pub tags: Vec<PuncTag>,
    pub language_style: LanguageStyle,
}

impl TaggedText {
    pub fn new(tokens: Vec<String>, tags: Vec<PuncTag>, language_style: LanguageStyle) -> Result<Self, PuncError> {
        if tokens.len() != tags.len() {
            return Err(PuncError::LengthMismatch {
                tokens: tokens.len(),
                tags: tags.len(),
            });
        }
        Ok(Self {
            tokens,
            tags,
            language_style,
        })
    }
}

/// Han characters become single tokens; every other run splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if c.is_whitespace() || is_cjk(c) {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            if is_cjk(c) {
                out.push(c.to_string());
            }
        } else {
            word.push(c);
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// Separator placed before `next`.
fn separator(prev: &str, prev_tag: PuncTag, next: &str, style: LanguageStyle) -> &'static str {
    let after_english_mark = prev_tag != PuncTag::None && style == LanguageStyle::EnglishHalfwidth;
    if after_english_mark || (!is_cjk_str(prev) && !is_cjk_str(next)) {
        " "
    } else {
        ""
    }
}

pub fn apply_tags(t: &TaggedText) -> Result<String, PuncError> {
    if t.tokens.len() != t.tags.len() {
        return Err(PuncError::LengthMismatch {
            tokens: t.tokens.len(),
            tags: t.tags.len(),
        });
    }
    let mut out = String::new();
    for (i, (tok, &tag)) in t.tokens.iter().zip(&t.tags).enumerate() {
        if i > 0 {
            out.push_str(separator(&t.tokens[i - 1], t.tags[i - 1], tok, t.language_style));
        }
        out.push_str(tok);
        if let Some(m) = tag.mark(t.language_style) {
            out.push(m);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StripOutcome {
    pub tagged: TaggedText,
    /// Marks that followed another mark, or came before any token.
    pub dropped_marks: usize,
    /// Punctuation outside the tag set, removed and tagged as none.
    pub unsupported_marks: usize,
}

enum Piece<'a> {
    Token(&'a str),
    Punct(char),
}

/// Leading and trailing punctuation is peeled off each word; inner
/// punctuation ("don't", "3.14") stays in the token.
fn split_word<'a>(w: &'a str, out: &mut Vec<Piece<'a>>) {
    let core = w.trim_matches(is_punctuation);
    if core.is_empty() {
        out.extend(w.chars().map(Piece::Punct));
        return;
    }
    let lead = w.len() - w.trim_start_matches(is_punctuation).len();
    out.extend(w[..lead].chars().map(Piece::Punct));
    out.push(Piece::Token(core));
    out.extend(w[lead + core.len()..].chars().map(Piece::Punct));
}

fn pieces(text: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() || is_cjk(c) {
            if let Some(s) = start.take() {
                split_word(&text[s..i], &mut out);
            }
            if is_cjk(c) {
                out.push(Piece::Token(&text[i..i + c.len_utf8()]));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        split_word(&text[s..], &mut out);
    }
    out
}

/// Remove the four marks, moving each onto the preceding token's tag.
pub fn strip_punctuation(text: &str, style: LanguageStyle) -> StripOutcome {
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    let mut dropped = 0;
    let mut unsupported = 0;
    let mut tagged_since_token = false;
    for p in pieces(text) {
        match p {
            Piece::Token(t) => {
                tokens.push(t.to_string());
                tags.push(PuncTag::None);
                tagged_since_token = false;
            }
            Piece::Punct(c) => match PuncTag::from_mark(c) {
                Some(tag) if !tags.is_empty() && !tagged_since_token => {
                    *tags.last_mut().expect("non-empty") = tag;
                    tagged_since_token = true;
                }
                Some(_) => dropped += 1,
                None => unsupported += 1,
            },
        }
    }
    StripOutcome {
        tagged: TaggedText {
            tokens,
            tags,
            language_style: style,
        },
        dropped_marks: dropped,
        unsupported_marks: unsupported,
    }
}

/// Token-level punctuation predictor.
pub trait PuncTagger {
    fn predict(&self, tokens: &[String]) -> Vec<PuncTag>;

    /// Whether `predict` may be called from several threads at once.
    fn supports_concurrent_calls(&self) -> bool;
}

/// Validate input and output around a tagger call.
pub fn tag<T: PuncTagger + ?Sized>(tagger: &T, tokens: &[String]) -> Result<Vec<PuncTag>, PuncError> {
    if tokens.is_empty() {
        return Err(PuncError::EmptyInput);
    }
    if let Some(i) = tokens.iter().position(String::is_empty) {
        return Err(PuncError::EmptyToken(i));
    }
    let tags = tagger.predict(tokens);
    if tags.len() != tokens.len() {
        return Err(PuncError::TaggerLength {
            expected: tokens.len(),
            got: tags.len(),
        });
    }
    Ok(tags)
}

/// Period on the last token, nothing elsewhere.
#[derive(Debug, Clone, Copy, Default)]
pub struct FinalPeriodTagger;

impl PuncTagger for FinalPeriodTagger {
    fn predict(&self, tokens: &[String]) -> Vec<PuncTag> {
        let mut tags = vec![PuncTag::None; tokens.len()];
        if let Some(last) = tags.last_mut() {
            *last = PuncTag::Period;
        }
        tags
    }

    fn supports_concurrent_calls(&self) -> bool {
        true
    }
}

/// Per-token lookup; unknown tokens get `none`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LookupTagger {
    pub table: HashMap<String, PuncTag>,
}

impl LookupTagger {
    pub fn new(table: HashMap<String, PuncTag>) -> Self {
        Self { table }
    }
}

impl PuncTagger for LookupTagger {
    fn predict(&self, tokens: &[String]) -> Vec<PuncTag> {
        tokens
            .iter()
            .map(|t| self.table.get(t).copied().unwrap_or(PuncTag::None))
            .collect()
    }

    fn supports_concurrent_calls(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PuncReference {
    #[serde(default)]
    pub id: Option<String>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PuncPrediction {
    #[serde(default)]
    pub id: Option<String>,
    pub tokens: Vec<String>,
    pub tags: Vec<PuncTag>,
}

fn read_jsonl<T: serde::de::DeserializeOwned, R: BufRead>(r: R) -> Result<Vec<T>, PuncError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| PuncError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

/// JSON lines of `{"text": ...}`.
pub fn read_references<R: BufRead>(r: R) -> Result<Vec<PuncReference>, PuncError> {
    read_jsonl(r)
}

/// JSON lines of `{"tokens": [...], "tags": [...]}`; lengths are checked.
pub fn read_predictions<R: BufRead>(r: R) -> Result<Vec<PuncPrediction>, PuncError> {
    let preds: Vec<PuncPrediction> = read_jsonl(r)?;
    for (i, p) in preds.iter().enumerate() {
        if p.tokens.len() != p.tags.len() {
            return Err(PuncError::Parse {
                line: i + 1,
                msg: format!("{} tokens but {} tags", p.tokens.len(), p.tags.len()),
            });
        }
    }
    Ok(preds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use LanguageStyle::*;
    use PuncTag::*;

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    fn apply(tokens: &[&str], tags: &[PuncTag], style: LanguageStyle) -> String {
        apply_tags(&TaggedText::new(toks(tokens), tags.to_vec(), style).unwrap()).unwrap()
    }

    #[test]
    fn apply_examples() {
        assert_eq!(apply(&["你", "好"], &[None, Period], ChineseFullwidth), "你好。");
        assert_eq!(apply(&["hello", "world"], &[Comma, Period], EnglishHalfwidth), "hello, world.");
        assert_eq!(apply(&["a", "b", "c"], &[None; 3], EnglishHalfwidth), "a b c");
        assert_eq!(apply(&["我", "用", "Rust", "写"], &[None; 4], ChineseFullwidth), "我用Rust写");
        let bad = TaggedText {
            tokens: toks(&["a"]),
            tags: vec![],
            language_style: EnglishHalfwidth,
        };
        assert!(matches!(apply_tags(&bad), Err(PuncError::LengthMismatch { .. })));
    }

    #[test]
    fn strip_examples() {
        let s = strip_punctuation("你好。", ChineseFullwidth);
        assert_eq!(s.tagged.tokens, ["你", "好"]);
        assert_eq!(s.tagged.tags, [None, Period]);
        let s = strip_punctuation("a, b.", EnglishHalfwidth);
        assert_eq!(s.tagged.tokens, ["a", "b"]);
        assert_eq!(s.tagged.tags, [Comma, Period]);
        let s = strip_punctuation("Really?! Yes: \"don't\" stop...", EnglishHalfwidth);
        assert_eq!(s.tagged.tokens, ["Really", "Yes", "don't", "stop"]);
        assert_eq!(s.tagged.tags, [Question, None, None, Period]);
        assert_eq!(s.dropped_marks, 3);
        assert_eq!(s.unsupported_marks, 3);
        let s = strip_punctuation("。你", ChineseFullwidth);
        assert_eq!((s.tagged.tags.as_slice(), s.dropped_marks), ([None].as_slice(), 1));
    }

    #[test]
    fn tagger_contract() {
        let t = FinalPeriodTagger;
        assert_eq!(tag(&t, &toks(&["a", "b"])).unwrap(), [None, Period]);
        assert!(matches!(tag(&t, &toks(&["a", ""])), Err(PuncError::EmptyToken(1))));
        assert!(matches!(tag(&t, &[]), Err(PuncError::EmptyInput)));
        let table: HashMap<String, PuncTag> =
            [("好", Period), ("嗎", Question), ("嗨", Exclamation)].map(|(k, v)| (k.to_string(), v)).into();
        let lt = LookupTagger::new(table.clone());
        let keys: Vec<String> = table.keys().cloned().collect();
        let got = tag(&lt, &keys).unwrap();
        for (k, g) in keys.iter().zip(got) {
            assert_eq!(table[k], g);
        }
        struct Broken;
        impl PuncTagger for Broken {
            fn predict(&self, _: &[String]) -> Vec<PuncTag> {
                vec![]
            }
            fn supports_concurrent_calls(&self) -> bool {
                false
            }
        }
        assert!(matches!(tag(&Broken, &toks(&["x"])), Err(PuncError::TaggerLength { expected: 1, got: 0 })));
    }

    #[test]
    fn jsonl_io() {
        let preds = read_predictions(r#"{"tokens": ["a", "b"], "tags": ["none", "period"]}"#.as_bytes()).unwrap();
        assert_eq!(preds[0].tags, [None, Period]);
        assert!(read_predictions(r#"{"tokens": ["a"], "tags": []}"#.as_bytes()).is_err());
        let refs = read_references("{\"text\": \"你好。\"}\n\n".as_bytes()).unwrap();
        assert_eq!(refs.len(), 1);
    }

    fn tag_strategy() -> impl Strategy<Value = PuncTag> {
        prop::sample::select(PuncTag::ALL.to_vec())
    }

    proptest! {
        #[test]
        fn english_round_trip(words in prop::collection::vec(("[a-z][a-z']{0,5}[a-z]", tag_strategy()), 1..12)) {
            let text = words.iter().map(|(w, t)| match t.mark(EnglishHalfwidth) {
                Some(m) => format!("{w}{m}"),
                _ => w.clone(),
            }).collect::<Vec<_>>().join(" ");
            let s = strip_punctuation(&text, EnglishHalfwidth);
            prop_assert_eq!(s.tagged.tokens.len(), words.len());
            prop_assert_eq!(apply_tags(&s.tagged).unwrap(), text);
        }

        #[test]
        fn output_length_accounts_for_marks_and_separators(
            items in prop::collection::vec(("[a-z]{1,4}|[一-龥]", tag_strategy()), 1..15),
            english in any::<bool>(),
        ) {
            let style = if english { EnglishHalfwidth } else { ChineseFullwidth };
            let (tokens, tags): (Vec<String>, Vec<PuncTag>) = items.into_iter().unzip();
            let t = TaggedText::new(tokens.clone(), tags.clone(), style).unwrap();
            let out = apply_tags(&t).unwrap();
            let chars: usize = tokens.iter().map(|t| t.chars().count()).sum();
            let marks = tags.iter().filter(|&&t| t != None).count();
            let seps: usize = (1..tokens.len()).map(|i| separator(&tokens[i - 1], tags[i - 1], &tokens[i], style).len()).sum();
            prop_assert_eq!(out.chars().count(), chars + marks + seps);
            let back = strip_punctuation(&out, style);
            prop_assert_eq!(back.tagged.tags.len(), back.tagged.tokens.len());
        }
    }
}
