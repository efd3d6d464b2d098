//! Decoding over pluggable next-token scorers: beam search, confidence and
//! two-token language identification.

mod lid;
mod scorer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use lid::{lid_decode, LabelKind, LidEntry, LidRegistry, LidResult, DIALECT_PARENT};
pub use scorer::{MockEntry, MockScorerSpec, TableScorer};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("scorer distribution for prefix {prefix:?} sums to {sum}")]
    NotNormalized { prefix: Vec<usize>, sum: f64 },
    #[error("scorer distribution for prefix {prefix:?}: {reason}")]
    BadDistribution { prefix: Vec<usize>, reason: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no hypothesis reached the end token")]
    NoHypothesis,
    #[error("label sequence {labels:?} violates the registry: {reason}")]
    LidStructure {
        reason: String,
        labels: Vec<String>,
        hypothesis: Hypothesis,
    },
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Next-token model. `prefix` always starts with `sos()`. Implementations
/// must be deterministic per prefix and return a distribution over
/// `vocab_size()` ids that sums to 1.
pub trait SequenceScorer {
    fn vocab_size(&self) -> usize;
    fn sos(&self) -> usize;
    fn eos(&self) -> usize;
    fn next_distribution(&self, prefix: &[usize]) -> Result<Vec<f64>, DecodeError>;
}

impl<S: SequenceScorer + ?Sized> SequenceScorer for &S {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn sos(&self) -> usize {
        (**self).sos()
    }
    fn eos(&self) -> usize {
        (**self).eos()
    }
    fn next_distribution(&self, prefix: &[usize]) -> Result<Vec<f64>, DecodeError> {
        (**self).next_distribution(prefix)
    }
}

pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// Including the leading start token and the trailing end token.
    pub tokens: Vec<usize>,
    /// Posterior of each non-special token, in order.
    pub posteriors: Vec<f64>,
    pub eos_posterior: f64,
    /// Sum of log posteriors of every emitted token, the end token included.
    pub score: f64,
}

impl Hypothesis {
    /// Tokens between the start and end markers.
    pub fn labels(&self) -> &[usize] {
        &self.tokens[1..self.tokens.len() - 1]
    }
}

fn checked_distribution<S: SequenceScorer + ?Sized>(scorer: &S, prefix: &[usize]) -> Result<Vec<f64>, DecodeError> {
    let dist = scorer.next_distribution(prefix)?;
    let bad = |reason: String| DecodeError::BadDistribution {
        prefix: prefix.to_vec(),
        reason,
    };
    if dist.len() != scorer.vocab_size() {
        return Err(bad(format!("{} entries for vocabulary {}", dist.len(), scorer.vocab_size())));
    }
    if dist.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(bad("entries must be finite and non-negative".into()));
    }
    let sum: f64 = dist.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(DecodeError::NotNormalized {
            prefix: prefix.to_vec(),
            sum,
        });
    }
    Ok(dist)
}

fn rank(a: &Hypothesis, b: &Hypothesis) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.tokens.cmp(&b.tokens))
}

/// Length-bounded beam search.
///
/// Each step pools end-terminated and extended candidates from every live
/// beam and keeps the best `beam_size`; terminated ones leave the beam. After
/// `max_len` label tokens only the end token may follow, at its actual
/// posterior. The start token is never emitted. Results are sorted by score,
/// ties broken by token sequence, and truncated to `beam_size`.
pub fn beam_search<S: SequenceScorer + ?Sized>(
    scorer: &S,
    beam_size: usize,
    max_len: usize,
) -> Result<Vec<Hypothesis>, DecodeError> {
    if beam_size == 0 || max_len == 0 {
        return Err(DecodeError::InvalidArgument("beam_size and max_len must be >= 1".into()));
    }
    let (sos, eos) = (scorer.sos(), scorer.eos());
    if sos == eos || sos >= scorer.vocab_size() || eos >= scorer.vocab_size() {
        return Err(DecodeError::InvalidArgument("sos and eos must be distinct vocabulary ids".into()));
    }
    let mut live = vec![Hypothesis {
        tokens: vec![sos],
        posteriors: Vec::new(),
        eos_posterior: 0.0,
        score: 0.0,
    }];
    let mut finished = Vec::new();
    for step in 0..=max_len {
        let mut pool = Vec::new();
        for hyp in &live {
            let dist = checked_distribution(scorer, &hyp.tokens)?;
            for (v, &p) in dist.iter().enumerate() {
                if p == 0.0 || v == sos || (step == max_len && v != eos) {
                    continue;
                }
                let mut next = hyp.clone();
                next.tokens.push(v);
                next.score += p.ln();
                if v == eos {
                    next.eos_posterior = p;
                } else {
                    next.posteriors.push(p);
                }
                pool.push(next);
            }
        }
        pool.sort_by(rank);
        pool.truncate(beam_size);
        live.clear();
        for h in pool {
            if *h.tokens.last().unwrap() == eos {
                finished.push(h);
            } else {
                live.push(h);
            }
        }
        if live.is_empty() {
            break;
        }
    }
    if finished.is_empty() {
        return Err(DecodeError::NoHypothesis);
    }
    finished.sort_by(rank);
    finished.truncate(beam_size);
    Ok(finished)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierRule {
    #[default]
    None,
    /// Drop log posteriors more than `k_sigma` standard deviations below
    /// their mean.
    DropBeyondKSigma,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfidenceConfig {
    pub clip_min: f64,
    pub clip_max: f64,
    pub outlier_rule: OutlierRule,
    pub k_sigma: f64,
}

impl Default for ConfidenceConfig {
    fn default() -> Self {
        Self {
            clip_min: 0.0,
            clip_max: 1.0,
            outlier_rule: OutlierRule::None,
            k_sigma: 3.0,
        }
    }
}

impl ConfidenceConfig {
    pub fn validate(&self) -> Result<(), DecodeError> {
        if !(0.0 <= self.clip_min && self.clip_min < self.clip_max && self.clip_max <= 1.0) {
            return Err(DecodeError::InvalidArgument("need 0 <= clip_min < clip_max <= 1".into()));
        }
        if !(self.k_sigma > 0.0) {
            return Err(DecodeError::InvalidArgument("k_sigma must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confidence {
    pub value: f64,
    /// Tokens that entered the mean after outlier filtering.
    pub tokens_used: usize,
    /// Set when there was nothing to average; `value` is then 0.
    pub empty: bool,
}

/// Geometric mean of token posteriors, after optional outlier removal, then
/// clipped.
pub fn geometric_confidence(posteriors: &[f64], cfg: &ConfidenceConfig) -> Result<Confidence, DecodeError> {
    cfg.validate()?;
    if posteriors.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(DecodeError::InvalidArgument("posteriors must lie in [0, 1]".into()));
    }
    if posteriors.is_empty() {
        return Ok(Confidence {
            value: 0.0,
            tokens_used: 0,
            empty: true,
        });
    }
    // Sorting makes the result independent of token order, bit for bit.
    let mut kept: Vec<f64> = posteriors.to_vec();
    kept.sort_by(f64::total_cmp);
    if cfg.outlier_rule == OutlierRule::DropBeyondKSigma && kept[0] > 0.0 {
        let logs: Vec<f64> = kept.iter().map(|p| p.ln()).collect();
        let n = logs.len() as f64;
        let mean = logs.iter().sum::<f64>() / n;
        let sd = (logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n).sqrt();
        let floor = mean - cfg.k_sigma * sd;
        kept = kept.into_iter().zip(logs).filter(|&(_, l)| l >= floor).map(|(p, _)| p).collect();
    }
    let n = kept.len();
    let product: f64 = kept.iter().product();
    let mean = if product > 0.0 && product.is_normal() {
        match n {
            1 => product,
            2 => product.sqrt(),
            _ => product.powf(1.0 / n as f64),
        }
    } else if kept[0] == 0.0 {
        0.0
    } else {
        (kept.iter().map(|p| p.ln()).sum::<f64>() / n as f64).exp()
    };
    Ok(Confidence {
        value: mean.clamp(cfg.clip_min, cfg.clip_max),
        tokens_used: n,
        empty: false,
    })
}

/// Plain mean, used for language-label confidence.
pub fn arithmetic_confidence(posteriors: &[f64]) -> f64 {
    if posteriors.is_empty() {
        0.0
    } else {
        posteriors.iter().sum::<f64>() / posteriors.len() as f64
    }
}
