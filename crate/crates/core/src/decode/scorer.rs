//! Table-driven scorer for tests and offline demos.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DecodeError, LidRegistry, SequenceScorer};

/// One row of the table: the distribution after `prefix` (the start token is
/// implicit). Tokens are ids or, with a registry, label codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockEntry {
    pub prefix: Vec<serde_json::Value>,
    pub probs: BTreeMap<String, f64>,
}

/// JSON description of a [`TableScorer`]. `vocab_size`, `sos` and `eos` may
/// be omitted when a registry supplies them.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScorerSpec {
    #[serde(default)]
    pub vocab_size: Option<usize>,
    #[serde(default)]
    pub sos: Option<usize>,
    #[serde(default)]
    pub eos: Option<usize>,
    pub entries: Vec<MockEntry>,
}

impl MockScorerSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, DecodeError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Distributions looked up by prefix. Prefixes missing from the table put all
/// mass on the end token.
#[derive(Debug, Clone, PartialEq)]
pub struct TableScorer {
    vocab_size: usize,
    sos: usize,
    eos: usize,
    table: HashMap<Vec<usize>, Vec<f64>>,
}

fn resolve(key: &str, registry: Option<&LidRegistry>) -> Result<usize, DecodeError> {
    if let Some(id) = registry.and_then(|r| r.id(key)) {
        return Ok(id);
    }
    key.parse().map_err(|_| DecodeError::UnknownLabel(key.to_string()))
}

impl TableScorer {
    pub fn new(vocab_size: usize, sos: usize, eos: usize) -> Result<Self, DecodeError> {
        if sos == eos || sos >= vocab_size || eos >= vocab_size {
            return Err(DecodeError::InvalidArgument("sos and eos must be distinct vocabulary ids".into()));
        }
        Ok(Self {
            vocab_size,
            sos,
            eos,
            table: HashMap::new(),
        })
    }

    /// Set the distribution after `prefix` (start token excluded).
    pub fn insert(&mut self, prefix: &[usize], dist: Vec<f64>) -> Result<(), DecodeError> {
        if dist.len() != self.vocab_size {
            return Err(DecodeError::InvalidArgument(format!(
                "distribution has {} entries, vocabulary is {}",
                dist.len(),
                self.vocab_size
            )));
        }
        if prefix.iter().any(|&t| t >= self.vocab_size) {
            return Err(DecodeError::InvalidArgument("prefix token outside vocabulary".into()));
        }
        let mut key = vec![self.sos];
        key.extend_from_slice(prefix);
        self.table.insert(key, dist);
        Ok(())
    }

    pub fn from_spec(spec: &MockScorerSpec, registry: Option<&LidRegistry>) -> Result<Self, DecodeError> {
        let missing = |f: &str| DecodeError::InvalidArgument(format!("mock scorer needs {f} or a registry"));
        let vocab = spec.vocab_size.or(registry.map(LidRegistry::len)).ok_or_else(|| missing("vocab_size"))?;
        let sos = spec.sos.or(registry.map(LidRegistry::sos)).ok_or_else(|| missing("sos"))?;
        let eos = spec.eos.or(registry.map(LidRegistry::eos)).ok_or_else(|| missing("eos"))?;
        let mut scorer = Self::new(vocab, sos, eos)?;
        for entry in &spec.entries {
            let prefix = entry
                .prefix
                .iter()
                .map(|v| match v {
                    serde_json::Value::String(s) => resolve(s, registry),
                    serde_json::Value::Number(n) => n
                        .as_u64()
                        .map(|x| x as usize)
                        .ok_or_else(|| DecodeError::UnknownLabel(n.to_string())),
                    other => Err(DecodeError::UnknownLabel(other.to_string())),
                })
                .collect::<Result<Vec<_>, _>>()?;
            let mut dist = vec![0.0; vocab];
            for (k, &p) in &entry.probs {
                let id = resolve(k, registry)?;
                if id >= vocab {
                    return Err(DecodeError::UnknownLabel(k.clone()));
                }
                dist[id] += p;
            }
            scorer.insert(&prefix, dist)?;
        }
        Ok(scorer)
    }
}

impl SequenceScorer for TableScorer {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn sos(&self) -> usize {
        self.sos
    }

    fn eos(&self) -> usize {
        self.eos
    }

    fn next_distribution(&self, prefix: &[usize]) -> Result<Vec<f64>, DecodeError> {
        Ok(self.table.get(prefix).cloned().unwrap_or_else(|| {
            let mut d = vec![0.0; self.vocab_size];
            d[self.eos] = 1.0;
            d
        }))
    }
}
