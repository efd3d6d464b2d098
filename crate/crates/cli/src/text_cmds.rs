//! align, punc-apply and pipeline.

use std::path::Path;

use anyhow::{anyhow, Context};
use serde::Serialize;
use speechstack::ctc_align::{
    encoder_frame_shift, forced_align, load_ctc_frames, merge_words, token_timestamps, TokenSpan, TokenTable,
    WordSpan,
};
use speechstack::decode::{LidRegistry, MockScorerSpec, TableScorer};
use speechstack::dfsmn::{load_weights, PosteriorTrack};
use speechstack::features::CmvnStats;
use speechstack::pipeline::{
    transcribe, Components, DfsmnVad, FixedPosteriorVad, LanguageIdentifier, LookupTranscriber, TableLid,
    VoiceDetector,
};
use speechstack::punc::{
    apply_tags, read_predictions, read_references, strip_punctuation, FinalPeriodTagger, LanguageStyle,
    LookupTagger, PuncTagger, TaggedText,
};
use speechstack::text::is_cjk;

use crate::config::FileConfig;
use crate::output::{emit, json_lines, pretty, read_json};
use crate::{usage, Cli, Command, StyleArg};

/// Encoder shift used when neither the flag nor the vocabulary gives one.
const DEFAULT_ENCODER_SUBSAMPLING: usize = 4;
const LID_BEAM: usize = 8;

pub fn run(cli: &Cli, cfg: &FileConfig) -> anyhow::Result<()> {
    match &cli.command {
        Command::Align {
            logits,
            vocab,
            tokens,
            frame_shift,
            out,
        } => align(logits, vocab, tokens, *frame_shift, out.out.as_deref()),
        Command::PuncApply {
            input,
            style,
            strip,
            out,
        } => punc_apply(input, *style, *strip, out.out.as_deref()),
        Command::Pipeline {
            input,
            weights,
            cmvn,
            posteriors,
            transcripts,
            lid,
            tagger,
            final_period,
            resample,
            out,
        } => {
            let vad: Box<dyn VoiceDetector> = match (weights, posteriors) {
                (Some(w), _) => Box::new(DfsmnVad {
                    model: load_weights(w).with_context(|| format!("reading {}", w.display()))?,
                    fbank: cfg.fbank.clone(),
                    cmvn: cmvn.as_deref().map(CmvnStats::load).transpose()?,
                    post: cfg.postprocess.clone(),
                }),
                (None, Some(p)) => Box::new(FixedPosteriorVad {
                    track: read_json::<PosteriorTrack>(p)?,
                    post: cfg.postprocess.clone(),
                }),
                (None, None) => return Err(usage("pipeline needs --weights or --posteriors")),
            };
            let lid = lid.as_deref().map(load_lid).transpose()?;
            let transcriber: LookupTranscriber = read_json(transcripts)?;
            let lookup = tagger.as_deref().map(read_json::<LookupTagger>).transpose()?;
            let tagger: Option<&(dyn PuncTagger + Sync)> = match (&lookup, final_period) {
                (Some(t), _) => Some(t),
                (None, true) => Some(&FinalPeriodTagger),
                (None, false) => None,
            };
            let audio = crate::audio_cmds::load_audio(input, resample.resample)?;
            let mut pcfg = cfg.pipeline();
            pcfg.jobs = cli.jobs;
            let components = Components {
                vad: vad.as_ref(),
                lid: lid.as_ref().map(|l| l as &dyn LanguageIdentifier),
                transcriber: &transcriber,
                tagger,
            };
            let result = transcribe(&audio, &components, &pcfg)?;
            emit(out.out.as_deref(), &result.to_canonical_json()?)
        }
        _ => unreachable!("dispatched by main"),
    }
}

fn load_lid(path: &Path) -> anyhow::Result<TableLid> {
    let specs: Vec<MockScorerSpec> = read_json(path)?;
    let registry = LidRegistry::builtin();
    let scorers = specs
        .iter()
        .map(|s| TableScorer::from_spec(s, Some(registry)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TableLid {
        registry,
        scorers,
        beam_size: LID_BEAM,
    })
}

#[derive(Serialize)]
struct AlignOutput {
    log_prob: f64,
    tokens: Vec<TokenSpan>,
    words: Vec<WordSpan>,
}

fn align(logits: &Path, vocab: &Path, tokens: &Path, frame_shift: Option<f64>, out: Option<&Path>) -> anyhow::Result<()> {
    let table = TokenTable::load(vocab).with_context(|| format!("reading {}", vocab.display()))?;
    let shift = frame_shift
        .or(table.frame_shift_s)
        .unwrap_or_else(|| encoder_frame_shift(0.01, DEFAULT_ENCODER_SUBSAMPLING));
    if !(shift > 0.0) {
        return Err(usage("frame shift must be positive"));
    }
    let targets: Vec<serde_json::Value> = read_json(tokens)?;
    let ids = targets
        .iter()
        .map(|v| match v {
            serde_json::Value::String(s) => table.id(s).ok_or_else(|| anyhow!("token {s:?} not in vocabulary")),
            serde_json::Value::Number(n) => n
                .as_u64()
                .map(|x| x as usize)
                .ok_or_else(|| anyhow!("bad token id {n}")),
            other => Err(anyhow!("bad token entry {other}")),
        })
        .collect::<anyhow::Result<Vec<usize>>>()?;
    let frames = load_ctc_frames(logits, shift).with_context(|| format!("reading {}", logits.display()))?;
    let al = forced_align(&frames, &ids)?;
    let spans = token_timestamps(&al, &table, shift)?;
    let words = merge_words(&spans)?;
    emit(
        out,
        &pretty(&AlignOutput {
            log_prob: al.log_prob,
            tokens: spans,
            words,
        })?,
    )
}

fn style_for(arg: StyleArg, han: bool) -> LanguageStyle {
    match arg {
        StyleArg::Chinese => LanguageStyle::ChineseFullwidth,
        StyleArg::English => LanguageStyle::EnglishHalfwidth,
        StyleArg::Auto if han => LanguageStyle::ChineseFullwidth,
        StyleArg::Auto => LanguageStyle::EnglishHalfwidth,
    }
}

#[derive(Serialize)]
struct TextLine {
    text: String,
}

fn punc_apply(input: &Path, style: StyleArg, strip: bool, out: Option<&Path>) -> anyhow::Result<()> {
    let reader = std::io::BufReader::new(std::fs::File::open(input)?);
    let text = if strip {
        let mut tagged = Vec::new();
        let (mut dropped, mut unsupported) = (0, 0);
        for r in read_references(reader)? {
            let s = strip_punctuation(&r.text, style_for(style, r.text.chars().any(is_cjk)));
            dropped += s.dropped_marks;
            unsupported += s.unsupported_marks;
            tagged.push(s.tagged);
        }
        eprintln!("dropped {dropped} repeated marks, removed {unsupported} marks outside the tag set");
        #[derive(Serialize)]
        struct Tagged<'a> {
            tokens: &'a [String],
            tags: &'a [speechstack::punc::PuncTag],
        }
        json_lines(
            &tagged
                .iter()
                .map(|t| Tagged {
                    tokens: &t.tokens,
                    tags: &t.tags,
                })
                .collect::<Vec<_>>(),
        )?
    } else {
        let lines = read_predictions(reader)?
            .into_iter()
            .map(|p| {
                let han = p.tokens.iter().any(|t| t.chars().any(is_cjk));
                let t = TaggedText::new(p.tokens, p.tags, style_for(style, han))?;
                Ok(TextLine { text: apply_tags(&t)? })
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        json_lines(&lines)?
    };
    emit(out, &text)
}
