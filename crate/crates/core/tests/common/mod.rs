#![allow(dead_code)]

use std::collections::HashMap;

use speechstack::audio::AudioBuffer;
use speechstack::ctc_align::TokenSpan;
use speechstack::decode::{LidRegistry, MockScorerSpec, TableScorer};
use speechstack::dfsmn::PosteriorTrack;
use speechstack::pipeline::{Components, FixedPosteriorVad, LookupTranscriber, TableLid, TranscriberOutput};
use speechstack::punc::{LookupTagger, PuncTag};
use speechstack::vad_post::PostprocessConfig;

/// Deterministic component stack behind the committed golden output:
/// 5 s of silence, voice posteriors at 1.0 on frames [100, 200) and
/// [300, 420), a Mandarin/Cantonese segment followed by an English one.
pub struct MockStack {
    pub audio: AudioBuffer,
    pub vad: FixedPosteriorVad,
    pub lid: TableLid,
    pub transcriber: LookupTranscriber,
    pub tagger: LookupTagger,
}

impl MockStack {
    pub fn components(&self) -> Components<'_> {
        Components {
            vad: &self.vad,
            lid: Some(&self.lid),
            transcriber: &self.transcriber,
            tagger: Some(&self.tagger),
        }
    }
}

fn spans(items: &[(&str, f64, f64)]) -> Vec<TokenSpan> {
    items
        .iter()
        .map(|&(t, a, b)| TokenSpan {
            token_id: 0,
            token_text: t.to_string(),
            start_s: a,
            end_s: b,
        })
        .collect()
}

fn output(items: &[(&str, f64, f64)], posteriors: &[f64]) -> TranscriberOutput {
    TranscriberOutput {
        tokens: items.iter().map(|i| i.0.to_string()).collect(),
        posteriors: posteriors.to_vec(),
        spans: Some(spans(items)),
    }
}

fn scorer(json: &str) -> TableScorer {
    let spec: MockScorerSpec = serde_json::from_str(json).unwrap();
    TableScorer::from_spec(&spec, Some(LidRegistry::builtin())).unwrap()
}

pub fn mock_stack() -> MockStack {
    let audio = AudioBuffer::new(vec![0; 5 * 16_000], 16_000).unwrap();
    let mut post = vec![0.0; 500];
    post[100..200].fill(1.0);
    post[300..420].fill(1.0);
    let vad = FixedPosteriorVad {
        track: PosteriorTrack::single(&post, 0.01).unwrap(),
        post: PostprocessConfig::default(),
    };
    let lid = TableLid {
        registry: LidRegistry::builtin(),
        scorers: vec![
            scorer(
                r#"{"entries": [
                    {"prefix": [], "probs": {"zh": 0.9, "en": 0.1}},
                    {"prefix": ["zh"], "probs": {"yue": 0.8, "<eos>": 0.2}},
                    {"prefix": ["zh", "yue"], "probs": {"<eos>": 1.0}}
                ]}"#,
            ),
            scorer(
                r#"{"entries": [
                    {"prefix": [], "probs": {"en": 0.95, "fr": 0.05}},
                    {"prefix": ["en"], "probs": {"<eos>": 1.0}}
                ]}"#,
            ),
        ],
        beam_size: 3,
    };
    let transcriber = LookupTranscriber {
        outputs: vec![
            output(
                &[("你", 0.1, 0.3), ("好", 0.3, 0.5), ("世", 0.6, 0.8), ("界", 0.8, 1.0)],
                &[0.9, 0.9, 0.9, 0.9],
            ),
            output(
                &[("▁hello", 0.0, 0.2), ("▁wor", 0.3, 0.5), ("ld", 0.5, 0.6), ("▁ok", 0.7, 0.9)],
                &[1.0, 0.25, 1.0, 1.0],
            ),
        ],
    };
    let tagger = LookupTagger::new(HashMap::from([
        ("好".to_string(), PuncTag::Comma),
        ("界".to_string(), PuncTag::Period),
        ("ok".to_string(), PuncTag::Question),
    ]));
    MockStack {
        audio,
        vad,
        lid,
        transcriber,
        tagger,
    }
}
