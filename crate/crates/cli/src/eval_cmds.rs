//! eval-vad, eval-cer, eval-punc and eval-lid.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use speechstack::audio::read_wav;
use speechstack::decode::LidResult;
use speechstack::dfsmn::PosteriorTrack;
use speechstack::metrics::{
    auc_roc, cer_counts, f1_far_mr, frame_labels_from_segments, lid_accuracy, macro_average, punc_prf,
    round_half_up, CerConfig, CerCounts, Confusion, LidGranularity, PuncReport, VadScores,
    FRAME_LEN_S, FRAME_SHIFT_S,
};
use speechstack::punc::{read_predictions, read_references, strip_punctuation, LanguageStyle};
use speechstack::text::is_cjk;
use speechstack::vad_post::read_segments_file;

use crate::config::FileConfig;
use crate::output::{emit, pretty, read_json, read_json_lines};
use crate::{usage, Cli, Command};

pub fn run(cli: &Cli, cfg: &FileConfig) -> anyhow::Result<()> {
    match &cli.command {
        Command::EvalVad {
            reference,
            segs,
            scores,
            duration,
            audio,
            out,
        } => {
            let duration = match (duration, audio) {
                (Some(d), _) => Some(*d),
                (None, Some(a)) => Some(read_wav(a)?.duration_s()),
                (None, None) => None,
            };
            let report = eval_vad(reference, segs, scores.as_deref(), duration)?;
            emit(out.out.as_deref(), &pretty(&report)?)
        }
        Command::EvalCer { reference, hyp, out } => {
            if reference.len() != hyp.len() {
                return Err(usage("give one --hyp per --ref"));
            }
            let report = eval_cer(reference, hyp, &cfg.cer, cli.jobs)?;
            emit(out.out.as_deref(), &pretty(&report)?)
        }
        Command::EvalPunc { reference, hyp, out } => emit(out.out.as_deref(), &pretty(&eval_punc(reference, hyp)?)?),
        Command::EvalLid { reference, hyp, out } => emit(out.out.as_deref(), &pretty(&eval_lid(reference, hyp)?)?),
        _ => unreachable!("dispatched by main"),
    }
}

#[derive(Debug, Serialize)]
pub struct VadEval {
    pub frames: usize,
    pub f1: f64,
    pub far: f64,
    pub mr: f64,
    pub counts: Confusion,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
}

fn eval_vad(reference: &Path, segs: &Path, scores: Option<&Path>, duration: Option<f64>) -> anyhow::Result<VadEval> {
    let track = scores.map(read_json::<PosteriorTrack>).transpose()?;
    let duration = match (duration, &track) {
        (Some(d), _) => d,
        (None, Some(t)) => (t.num_frames().max(1) - 1) as f64 * FRAME_SHIFT_S + FRAME_LEN_S,
        (None, None) => return Err(usage("eval-vad needs --duration, --audio or --scores")),
    };
    let r = frame_labels_from_segments(&read_segments_file(reference)?, duration)?;
    let h = frame_labels_from_segments(&read_segments_file(segs)?, duration)?;
    let rep = f1_far_mr(&h, &r)?;
    let auc = match track {
        Some(t) => {
            if t.num_channels() != 1 {
                bail!("scores must have a single channel");
            }
            if t.num_frames() != r.len() {
                bail!("{} score frames for {} reference frames", t.num_frames(), r.len());
            }
            Some(auc_roc(&VadScores::new(t.channel(0))?, &r)?)
        }
        None => None,
    };
    Ok(VadEval {
        frames: r.len(),
        f1: rep.f1,
        far: rep.far,
        mr: rep.mr,
        counts: rep.counts,
        auc,
    })
}

#[derive(Debug, Deserialize)]
struct Utterance {
    id: String,
    text: String,
}

#[derive(Debug, Serialize)]
pub struct CerSet {
    pub reference: PathBuf,
    pub hypothesis: PathBuf,
    pub utterances: usize,
    pub missing_hypotheses: usize,
    pub errors: usize,
    pub ref_units: usize,
    pub cer: f64,
}

#[derive(Debug, Serialize)]
pub struct CerEval {
    pub sets: Vec<CerSet>,
    pub macro_average: f64,
    pub macro_average_2dp: f64,
}

fn cer_set(reference: &Path, hyp: &Path, cfg: &CerConfig) -> anyhow::Result<CerSet> {
    let refs: Vec<Utterance> = read_json_lines(reference)?;
    let hyps: HashMap<String, String> = read_json_lines::<Utterance>(hyp)?
        .into_iter()
        .map(|u| (u.id, u.text))
        .collect();
    let mut total = CerCounts::default();
    let mut missing = 0;
    for u in &refs {
        let h = hyps.get(&u.id).map(String::as_str).unwrap_or_else(|| {
            missing += 1;
            ""
        });
        total += cer_counts(&u.text, h, cfg);
    }
    let cer = total.cer().with_context(|| format!("{}", reference.display()))?;
    Ok(CerSet {
        reference: reference.to_path_buf(),
        hypothesis: hyp.to_path_buf(),
        utterances: refs.len(),
        missing_hypotheses: missing,
        errors: total.errors,
        ref_units: total.ref_units,
        cer,
    })
}

fn eval_cer(refs: &[PathBuf], hyps: &[PathBuf], cfg: &CerConfig, jobs: usize) -> anyhow::Result<CerEval> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    let sets: Vec<CerSet> = pool.install(|| {
        refs.par_iter()
            .zip(hyps)
            .map(|(r, h)| cer_set(r, h, cfg))
            .collect::<anyhow::Result<_>>()
    })?;
    let avg = macro_average(&sets.iter().map(|s| s.cer).collect::<Vec<_>>())?;
    Ok(CerEval {
        sets,
        macro_average: avg,
        macro_average_2dp: round_half_up(avg, 2),
    })
}

#[derive(Debug, Serialize)]
pub struct PuncEval {
    pub sentences: usize,
    pub dropped_marks: usize,
    pub unsupported_marks: usize,
    #[serde(flatten)]
    pub report: PuncReport,
}

fn eval_punc(reference: &Path, hyp: &Path) -> anyhow::Result<PuncEval> {
    let refs = read_references(std::io::BufReader::new(std::fs::File::open(reference)?))?;
    let preds = read_predictions(std::io::BufReader::new(std::fs::File::open(hyp)?))?;
    if refs.len() != preds.len() {
        bail!("{} reference lines but {} predictions", refs.len(), preds.len());
    }
    let (mut rt, mut ht) = (Vec::new(), Vec::new());
    let (mut dropped, mut unsupported) = (0, 0);
    for (i, (r, p)) in refs.iter().zip(&preds).enumerate() {
        let style = if r.text.chars().any(is_cjk) {
            LanguageStyle::ChineseFullwidth
        } else {
            LanguageStyle::EnglishHalfwidth
        };
        let s = strip_punctuation(&r.text, style);
        if s.tagged.tokens != p.tokens {
            bail!("line {}: prediction tokens differ from the reference tokens", i + 1);
        }
        dropped += s.dropped_marks;
        unsupported += s.unsupported_marks;
        rt.extend(s.tagged.tags);
        ht.extend(p.tags.iter().copied());
    }
    Ok(PuncEval {
        sentences: refs.len(),
        dropped_marks: dropped,
        unsupported_marks: unsupported,
        report: punc_prf(&rt, &ht)?,
    })
}

#[derive(Debug, Deserialize)]
struct LidLabel {
    language: String,
    #[serde(default)]
    dialect: Option<String>,
}

impl From<LidLabel> for LidResult {
    fn from(l: LidLabel) -> Self {
        LidResult {
            language: l.language,
            dialect: l.dialect,
            confidence: 1.0,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct LidEval {
    pub utterances: usize,
    pub language_accuracy: f64,
    pub dialect_accuracy: f64,
}

fn eval_lid(reference: &Path, hyp: &Path) -> anyhow::Result<LidEval> {
    let load = |p: &Path| -> anyhow::Result<Vec<LidResult>> {
        Ok(read_json_lines::<LidLabel>(p)?.into_iter().map(LidResult::from).collect())
    };
    let (r, h) = (load(reference)?, load(hyp)?);
    Ok(LidEval {
        utterances: r.len(),
        language_accuracy: lid_accuracy(&r, &h, LidGranularity::Language)?,
        dialect_accuracy: lid_accuracy(&r, &h, LidGranularity::Dialect)?,
    })
}
