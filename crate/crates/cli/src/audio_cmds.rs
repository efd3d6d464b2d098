//! fbank, vad, mvad, vad-stream and train-vad.

use std::path::Path;

use anyhow::{bail, Context};
use serde::Serialize;
use speechstack::audio::{read_wav, AudioBuffer, CANONICAL_SAMPLE_RATE};
use speechstack::dfsmn::{
    build_dataset, count_parameters, frame_f1, generate_synthetic_corpus, load_weights, save_weights,
    train_frame_classifier, CorpusSpec, DfsmnConfig, DfsmnModel, LabelSet, TrainReport,
};
use speechstack::features::{apply_cmvn, compute_fbank, estimate_cmvn, CmvnStats, FeatureMatrix};
use speechstack::pipeline::DfsmnVad;
use speechstack::vad_post::{
    mvad_segments, vad_segments, write_segments_jsonl, write_segments_tsv, StreamEvent, VadStream,
};

use crate::config::FileConfig;
use crate::output::{emit, json_lines, pretty};
use crate::{usage, Cli, Command, Format, ModelArgs, Preset, Task};

pub fn run(cli: &Cli, cfg: &FileConfig) -> anyhow::Result<()> {
    match &cli.command {
        Command::Fbank {
            input,
            cmvn,
            estimate_cmvn: est,
            resample,
            format,
            out,
        } => {
            let audio = load_audio(input, resample.resample)?;
            fbank(&audio, cmvn.as_deref(), est.as_deref(), *format, out.out.as_deref(), cfg)
        }
        Command::Vad {
            model,
            threshold,
            posteriors_out,
            format,
            out,
        } => vad(model, *threshold, posteriors_out.as_deref(), *format, out.out.as_deref(), cfg),
        Command::Mvad { model, format, out } => mvad(model, *format, out.out.as_deref(), cfg),
        Command::VadStream {
            model,
            chunk_frames,
            out,
        } => vad_stream(model, *chunk_frames, out.out.as_deref(), cfg),
        Command::TrainVad {
            out,
            cmvn_out,
            report,
            task,
            preset,
            causal,
            minutes,
            epochs,
        } => {
            let opts = TrainOptions {
                task: *task,
                preset: *preset,
                causal: *causal,
                minutes: *minutes,
                epochs: *epochs,
                seed: cli.seed,
            };
            train_vad(out, cmvn_out, report.as_deref(), &opts, cfg)
        }
        _ => unreachable!("dispatched by main"),
    }
}

/// Reads a WAV file. Only with `resample` is non-16 kHz audio converted; otherwise it is passed
/// through and rejected by the feature front-end.
pub fn load_audio(path: &Path, resample: bool) -> anyhow::Result<AudioBuffer> {
    let a = read_wav(path).with_context(|| format!("reading {}", path.display()))?;
    if resample && a.sample_rate() != CANONICAL_SAMPLE_RATE {
        Ok(a.resample_linear(CANONICAL_SAMPLE_RATE)?)
    } else {
        Ok(a)
    }
}

fn load_cmvn(path: Option<&Path>) -> anyhow::Result<Option<CmvnStats>> {
    path.map(|p| CmvnStats::load(p).with_context(|| format!("reading {}", p.display())))
        .transpose()
}

#[derive(Serialize)]
struct FeatureDump<'a> {
    frame_shift_s: f64,
    frame_len_s: f64,
    num_frames: usize,
    dim: usize,
    frames: Vec<&'a [f64]>,
}

fn fbank(
    audio: &AudioBuffer,
    cmvn: Option<&Path>,
    est: Option<&Path>,
    format: Format,
    out: Option<&Path>,
    cfg: &FileConfig,
) -> anyhow::Result<()> {
    let mut feats = compute_fbank(audio, &cfg.fbank)?;
    if let Some(p) = est {
        estimate_cmvn([&feats])?.save(p)?;
    }
    if let Some(stats) = load_cmvn(cmvn)? {
        feats = apply_cmvn(&feats, &stats)?;
    }
    let rows: Vec<&[f64]> = feats
        .frames
        .rows()
        .into_iter()
        .map(|r| r.to_slice().expect("standard layout"))
        .collect();
    let text = match format {
        Format::Json => pretty(&FeatureDump {
            frame_shift_s: feats.frame_shift_s,
            frame_len_s: feats.frame_len_s,
            num_frames: feats.num_frames(),
            dim: feats.dim(),
            frames: rows,
        })?,
        Format::Tsv => rows
            .iter()
            .map(|r| r.iter().map(f64::to_string).collect::<Vec<_>>().join("\t") + "\n")
            .collect(),
    };
    emit(out, &text)
}

fn load_model(m: &ModelArgs, cfg: &FileConfig) -> anyhow::Result<(DfsmnVad, AudioBuffer)> {
    let model = load_weights(&m.weights).with_context(|| format!("reading {}", m.weights.display()))?;
    let vad = DfsmnVad {
        model,
        fbank: cfg.fbank.clone(),
        cmvn: load_cmvn(m.cmvn.as_deref())?,
        post: cfg.postprocess.clone(),
    };
    Ok((vad, load_audio(&m.input, m.resample.resample)?))
}

fn features(vad: &DfsmnVad, audio: &AudioBuffer) -> anyhow::Result<FeatureMatrix> {
    let mut f = compute_fbank(audio, &vad.fbank)?;
    if let Some(s) = &vad.cmvn {
        f = apply_cmvn(&f, s)?;
    }
    Ok(f)
}

fn vad(
    m: &ModelArgs,
    threshold: Option<f64>,
    posteriors_out: Option<&Path>,
    format: Format,
    out: Option<&Path>,
    cfg: &FileConfig,
) -> anyhow::Result<()> {
    let (mut vad, audio) = load_model(m, cfg)?;
    if vad.model.config().num_outputs != 1 {
        bail!("vad needs a single-output model; use mvad for three outputs");
    }
    if let Some(t) = threshold {
        vad.post.threshold = t;
    }
    let track = vad.posteriors(&audio)?;
    if let Some(p) = posteriors_out {
        std::fs::write(p, serde_json::to_string(&track)? + "\n")?;
    }
    let segs = vad_segments(&track, &vad.post)?;
    let mut buf = Vec::new();
    match format {
        Format::Json => write_segments_jsonl(&segs, &mut buf)?,
        Format::Tsv => write_segments_tsv(&segs, &mut buf)?,
    }
    emit(out, std::str::from_utf8(&buf)?)
}

fn mvad(m: &ModelArgs, format: Format, out: Option<&Path>, cfg: &FileConfig) -> anyhow::Result<()> {
    let (vad, audio) = load_model(m, cfg)?;
    if vad.model.config().num_outputs != 3 {
        bail!("mvad needs a three-output model");
    }
    let events = mvad_segments(&vad.posteriors(&audio)?, &cfg.mvad())?;
    let text = match format {
        Format::Json => pretty(&events)?,
        Format::Tsv => events
            .values()
            .flatten()
            .map(|s| format!("{}\t{}\t{}\n", s.start_s, s.end_s, s.label))
            .collect(),
    };
    emit(out, &text)
}

/// Feed features through the causal model `chunk` frames at a time.
pub fn stream_events(model: &DfsmnModel, feats: &FeatureMatrix, chunk: usize, cfg: &FileConfig) -> anyhow::Result<Vec<StreamEvent>> {
    let mut state = model.init_stream()?;
    let mut fsm = VadStream::new(&cfg.postprocess, feats.frame_shift_s)?;
    let mut events = Vec::new();
    let mut start = 0;
    while start < feats.num_frames() {
        let end = (start + chunk).min(feats.num_frames());
        let post = model.forward_streaming(&mut state, &feats.slice_frames(start, end))?;
        events.extend(post.channel(0).into_iter().filter_map(|p| fsm.step(p)));
        start = end;
    }
    events.extend(fsm.finish());
    Ok(events)
}

fn vad_stream(m: &ModelArgs, chunk: usize, out: Option<&Path>, cfg: &FileConfig) -> anyhow::Result<()> {
    if chunk == 0 {
        return Err(usage("--chunk-frames must be at least 1"));
    }
    let (vad, audio) = load_model(m, cfg)?;
    if !vad.model.config().is_causal() || vad.model.config().num_outputs != 1 {
        bail!("vad-stream needs a causal single-output model");
    }
    let feats = features(&vad, &audio)?;
    emit(out, &json_lines(&stream_events(&vad.model, &feats, chunk, cfg)?)?)
}

struct TrainOptions {
    task: Task,
    preset: Preset,
    causal: bool,
    minutes: Option<f64>,
    epochs: Option<usize>,
    seed: u64,
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    parameters: usize,
    corpus_minutes: f64,
    test_utterances: usize,
    test_f1: f64,
    model: &'a DfsmnConfig,
    report: &'a TrainReport,
}

fn train_vad(out: &Path, cmvn_out: &Path, report: Option<&Path>, o: &TrainOptions, cfg: &FileConfig) -> anyhow::Result<()> {
    let mut spec = cfg.corpus.clone();
    if let Some(m) = o.minutes {
        if !(m > 0.0) {
            return Err(usage("--minutes must be positive"));
        }
        spec.num_utterances = (m * 60.0 / spec.utterance_s).ceil() as usize;
    }
    let mut model_cfg = cfg.model.clone().unwrap_or_else(|| match o.preset {
        Preset::Desk => DfsmnConfig::desk_vad(),
        Preset::Full => DfsmnConfig::offline_vad(),
    });
    let set = match o.task {
        Task::Vad => LabelSet::Vad,
        Task::Mvad => LabelSet::Mvad,
    };
    model_cfg.num_outputs = set.num_channels();
    if o.causal {
        model_cfg.lookahead_order = 0;
    }
    let mut train = cfg.train.clone();
    train.seed = o.seed;
    if let Some(e) = o.epochs {
        train.epochs = e;
    }

    eprintln!("generating {:.1} min of synthetic audio", spec.total_duration_s() / 60.0);
    let corpus = generate_synthetic_corpus(o.seed, &spec);
    let (data, stats) = build_dataset(&corpus, &cfg.fbank, set, None)?;
    eprintln!("training {} parameters", count_parameters(&model_cfg));
    let (model, rep) = train_frame_classifier(&data, &model_cfg, &train)?;

    let test_spec = CorpusSpec {
        num_utterances: (spec.num_utterances / 10).max(1),
        ..spec.clone()
    };
    let test_corpus = generate_synthetic_corpus(o.seed.wrapping_add(1), &test_spec);
    let (test, _) = build_dataset(&test_corpus, &cfg.fbank, set, Some(&stats))?;
    let test_f1 = frame_f1(&model, &test, train.threshold)?;

    save_weights(&model, out)?;
    stats.save(cmvn_out)?;
    let summary = TrainSummary {
        parameters: model.count_parameters(),
        corpus_minutes: spec.total_duration_s() / 60.0,
        test_utterances: test.len(),
        test_f1: 100.0 * test_f1,
        model: model.config(),
        report: &rep,
    };
    emit(report, &pretty(&summary)?)
}
