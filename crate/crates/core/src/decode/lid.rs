//! Language and Chinese-dialect label registry, and two-token LID decoding.

use std::collections::HashMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::{arithmetic_confidence, beam_search, DecodeError, Hypothesis, SequenceScorer};

/// Dialect labels may only follow this language.
pub const DIALECT_PARENT: &str = "zh";
pub const SOS_LABEL: &str = "<sos>";
pub const EOS_LABEL: &str = "<eos>";
const LID_MAX_LEN: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    Special,
    Language,
    Dialect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LidEntry {
    pub id: usize,
    pub code: String,
    pub kind: LabelKind,
    pub english: String,
    pub chinese: String,
}

#[derive(Deserialize)]
struct RawEntry {
    code: String,
    english: String,
    chinese: String,
}

#[derive(Deserialize)]
struct RawRegistry {
    languages: Vec<RawEntry>,
    dialects: Vec<RawEntry>,
}

/// Token vocabulary of the LID decoder: `<sos>` = 0, `<eos>` = 1, then the
/// languages, then the dialects, in table order.
#[derive(Debug, Clone, PartialEq)]
pub struct LidRegistry {
    entries: Vec<LidEntry>,
    by_code: HashMap<String, usize>,
}

impl LidRegistry {
    /// The shipped 96-language, 8-dialect table.
    pub fn builtin() -> &'static LidRegistry {
        static REG: OnceLock<LidRegistry> = OnceLock::new();
        REG.get_or_init(|| {
            let raw: RawRegistry =
                serde_json::from_str(include_str!("../../data/lid_registry.json")).expect("embedded registry parses");
            LidRegistry::from_tables(raw.languages, raw.dialects).expect("embedded registry is well formed")
        })
    }

    fn from_tables(languages: Vec<RawEntry>, dialects: Vec<RawEntry>) -> Result<Self, DecodeError> {
        let mut entries = vec![
            LidEntry {
                id: 0,
                code: SOS_LABEL.into(),
                kind: LabelKind::Special,
                english: String::new(),
                chinese: String::new(),
            },
            LidEntry {
                id: 1,
                code: EOS_LABEL.into(),
                kind: LabelKind::Special,
                english: String::new(),
                chinese: String::new(),
            },
        ];
        let tagged = languages
            .into_iter()
            .map(|e| (e, LabelKind::Language))
            .chain(dialects.into_iter().map(|e| (e, LabelKind::Dialect)));
        for (e, kind) in tagged {
            entries.push(LidEntry {
                id: entries.len(),
                code: e.code,
                kind,
                english: e.english,
                chinese: e.chinese,
            });
        }
        let mut by_code = HashMap::new();
        for e in &entries {
            if by_code.insert(e.code.clone(), e.id).is_some() {
                return Err(DecodeError::InvalidArgument(format!("duplicate code {}", e.code)));
            }
        }
        if !by_code.contains_key(DIALECT_PARENT) {
            return Err(DecodeError::InvalidArgument("registry lacks the dialect parent".into()));
        }
        Ok(Self { entries, by_code })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[LidEntry] {
        &self.entries
    }

    pub fn entry(&self, id: usize) -> Option<&LidEntry> {
        self.entries.get(id)
    }

    pub fn id(&self, code: &str) -> Option<usize> {
        self.by_code.get(code).copied()
    }

    pub fn sos(&self) -> usize {
        0
    }

    pub fn eos(&self) -> usize {
        1
    }

    pub fn languages(&self) -> impl Iterator<Item = &LidEntry> {
        self.entries.iter().filter(|e| e.kind == LabelKind::Language)
    }

    pub fn dialects(&self) -> impl Iterator<Item = &LidEntry> {
        self.entries.iter().filter(|e| e.kind == LabelKind::Dialect)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.entries).expect("entries serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidResult {
    pub language: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dialect: Option<String>,
    pub confidence: f64,
}

/// Decode at most two label tokens and read them as (language, dialect).
/// Confidence is the arithmetic mean of the label posteriors.
pub fn lid_decode<S: SequenceScorer + ?Sized>(
    scorer: &S,
    registry: &LidRegistry,
    beam_size: usize,
) -> Result<LidResult, DecodeError> {
    if scorer.vocab_size() != registry.len() || scorer.sos() != registry.sos() || scorer.eos() != registry.eos() {
        return Err(DecodeError::InvalidArgument(
            "scorer vocabulary does not match the label registry".into(),
        ));
    }
    let best = beam_search(scorer, beam_size, LID_MAX_LEN)?
        .into_iter()
        .next()
        .ok_or(DecodeError::NoHypothesis)?;
    parse_labels(&best, registry)
}

fn parse_labels(hyp: &Hypothesis, registry: &LidRegistry) -> Result<LidResult, DecodeError> {
    let entries: Vec<&LidEntry> = hyp.labels().iter().map(|&id| registry.entry(id).expect("id in vocabulary")).collect();
    let fail = |reason: &str| DecodeError::LidStructure {
        reason: reason.to_string(),
        labels: entries.iter().map(|e| e.code.clone()).collect(),
        hypothesis: hyp.clone(),
    };
    let (language, dialect) = match entries.as_slice() {
        [] => return Err(fail("no label token")),
        [lang] if lang.kind == LabelKind::Language => (lang, None),
        [lang, dia] if lang.kind == LabelKind::Language && dia.kind == LabelKind::Dialect => {
            if lang.code != DIALECT_PARENT {
                return Err(fail("dialect label after a language other than zh"));
            }
            (lang, Some(dia.code.clone()))
        }
        [first, ..] if first.kind != LabelKind::Language => return Err(fail("first label is not a language")),
        _ => return Err(fail("second label is not a dialect")),
    };
    Ok(LidResult {
        language: language.code.clone(),
        dialect,
        confidence: arithmetic_confidence(&hyp.posteriors),
    })
}
