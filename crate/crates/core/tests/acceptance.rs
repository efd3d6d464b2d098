//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

mod common;

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use speechstack::audio::AudioBuffer;
use speechstack::ctc_align::{collapse, forced_align, CtcError, CtcFrames, BLANK_ID};
use speechstack::decode::{
    beam_search, geometric_confidence, lid_decode, ConfidenceConfig, LidRegistry, MockScorerSpec, SequenceScorer,
    TableScorer,
};
use speechstack::dfsmn::{
    build_dataset, count_parameters, frame_f1, generate_synthetic_corpus, train_frame_classifier, CorpusSpec,
    DfsmnConfig, DfsmnModel, LabelSet, TrainConfig,
};
use speechstack::features::{compute_fbank, FbankConfig};
use speechstack::metrics::{auc_from_scores, cer_with, edit_distance, macro_average, punc_prf, round_half_up, CerConfig};
use speechstack::pipeline::{transcribe, PipelineConfig};
use speechstack::punc::{apply_tags, strip_punctuation, LanguageStyle, PuncTag};
use speechstack::vad_post::{
    binarize, events_to_segments, fsm_segments, refine_segments, segments_from_decisions, smooth_values,
    vad_segments, PostprocessConfig, Segment, VadStream,
};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// 1 ---------------------------------------------------------------------------

fn parameter_budget() -> Outcome {
    let cfg = DfsmnConfig {
        num_blocks: 8,
        hidden_size: 256,
        proj_size: 128,
        lookback_order: 20,
        lookahead_order: 20,
        stride: 1,
        dropout: 0.0,
        num_outputs: 1,
        input_dim: 80,
    };
    let n = count_parameters(&cfg);
    let built = DfsmnModel::random(cfg, 0).map_err(|e| e.to_string())?.count_parameters();
    ensure!(n == built, "config count {n} differs from instantiated model {built}");
    ensure!((500_000..=700_000).contains(&n), "{n} parameters outside [500k, 700k]");
    Ok(format!("{n} parameters"))
}

// 2 ---------------------------------------------------------------------------

fn streaming_equivalence() -> Outcome {
    let mut r = rng(2);
    let samples: Vec<i16> = (0..160_000)
        .map(|i| {
            let amp = if (i / 12_000) % 2 == 0 { 6_000 } else { 60 };
            r.random_range(-amp..=amp) as i16
        })
        .collect();
    let audio = AudioBuffer::new(samples, 16_000).map_err(|e| e.to_string())?;
    let feats = compute_fbank(&audio, &FbankConfig::default()).map_err(|e| e.to_string())?;
    let model = DfsmnModel::random(DfsmnConfig::streaming_vad(), 5).map_err(|e| e.to_string())?;
    let full = model.forward_full(&feats).map_err(|e| e.to_string())?;
    let n = feats.num_frames();
    let mut worst = 0.0f64;
    let runs = 100;
    for run in 0..runs {
        let mut state = model.init_stream().map_err(|e| e.to_string())?;
        let mut start = 0;
        let mut out = Vec::with_capacity(n);
        while start < n {
            let len = match run % 4 {
                0 => r.random_range(1..=4),
                1 => r.random_range(1..=40),
                2 => r.random_range(1..=400),
                _ => r.random_range(1..=n),
            };
            let end = (start + len).min(n);
            let part = model
                .forward_streaming(&mut state, &feats.slice_frames(start, end))
                .map_err(|e| e.to_string())?;
            out.extend(part.channel(0));
            start = end;
        }
        ensure!(out.len() == n, "run {run}: {} streamed frames for {n}", out.len());
        for (a, b) in out.iter().zip(full.channel(0)) {
            worst = worst.max((a - b).abs());
        }
    }
    ensure!(worst <= 1e-5, "max abs deviation {worst:e}");
    Ok(format!("{runs} chunkings of {n} frames, max abs diff {worst:.1e}"))
}

// 3 ---------------------------------------------------------------------------

fn desk_training() -> Outcome {
    let t0 = Instant::now();
    let spec = CorpusSpec::default();
    let minutes = spec.total_duration_s() / 60.0;
    ensure!(minutes >= 30.0, "corpus is only {minutes} min");
    let fb = FbankConfig::default();
    let err = |e: &dyn std::fmt::Display| e.to_string();
    let (train, stats) =
        build_dataset(&generate_synthetic_corpus(0, &spec), &fb, LabelSet::Vad, None).map_err(|e| err(&e))?;
    let test_spec = CorpusSpec {
        num_utterances: 30,
        ..spec.clone()
    };
    let (test, _) = build_dataset(&generate_synthetic_corpus(1, &test_spec), &fb, LabelSet::Vad, Some(&stats))
        .map_err(|e| err(&e))?;
    let (model, _) =
        train_frame_classifier(&train, &DfsmnConfig::desk_vad(), &TrainConfig::default()).map_err(|e| err(&e))?;
    let f1 = 100.0 * frame_f1(&model, &test, 0.5).map_err(|e| err(&e))?;
    let secs = t0.elapsed().as_secs_f64();
    ensure!(f1 >= 95.0, "held-out F1 {f1:.2}% < 95%");
    ensure!(secs <= 600.0, "took {secs:.0} s");
    Ok(format!(
        "{minutes:.0} min corpus, {} params, held-out F1 {f1:.2}% in {secs:.0} s",
        model.count_parameters()
    ))
}

// 4 ---------------------------------------------------------------------------

/// Best log-probability over every blank-augmented label path that collapses
/// to `tokens`, summed in time order.
fn brute_force_ctc(lp: &Array2<f64>, tokens: &[usize]) -> Option<f64> {
    let (t, v) = lp.dim();
    let mut best: Option<f64> = None;
    let mut path = vec![0usize; t];
    let total = v.pow(t as u32);
    for code in 0..total {
        let mut c = code;
        for slot in path.iter_mut() {
            *slot = c % v;
            c /= v;
        }
        if collapse(&path) != tokens {
            continue;
        }
        let mut s = 0.0;
        for (f, &l) in path.iter().enumerate() {
            s += lp[[f, l]];
        }
        if best.is_none_or(|b| s > b) {
            best = Some(s);
        }
    }
    best
}

fn ctc_oracle() -> Outcome {
    let shapes: Vec<(usize, usize, usize)> = (1..=8)
        .flat_map(|t| (2..=4).flat_map(move |v| (1..=3).map(move |l| (t, v, l))))
        .collect();
    let (mut feasible, mut infeasible) = (0, 0);
    for seed in 0..1000u64 {
        let (t, v, l) = shapes[seed as usize % shapes.len()];
        let mut r = rng(1_000 + seed);
        let logits = Array2::from_shape_fn((t, v), |_| r.random_range(-4.0..4.0));
        let tokens: Vec<usize> = (0..l).map(|_| r.random_range(1..v)).collect();
        let frames = CtcFrames::from_logits(logits, 0.04).map_err(|e| e.to_string())?;
        let oracle = brute_force_ctc(frames.log_probs(), &tokens);
        match (forced_align(&frames, &tokens), oracle) {
            (Ok(al), Some(best)) => {
                ensure!(
                    al.log_prob == best,
                    "seed {seed} T={t} V={v} tokens={tokens:?}: {} vs oracle {best}",
                    al.log_prob
                );
                let labels = al.labels();
                ensure!(collapse(&labels) == tokens, "seed {seed}: path does not collapse to the tokens");
                let resum: f64 = labels.iter().enumerate().map(|(f, &k)| frames.log_probs()[[f, k]]).sum();
                ensure!(resum == best, "seed {seed}: path score {resum} != reported {best}");
                ensure!(labels.iter().all(|&k| k == BLANK_ID || tokens.contains(&k)), "seed {seed}: stray label");
                feasible += 1;
            }
            (Err(CtcError::Infeasible { .. }), None) => infeasible += 1,
            (got, want) => return Err(format!("seed {seed}: aligner {got:?} but oracle {want:?}")),
        }
    }
    Ok(format!("1000 seeds over {} shapes: {feasible} exact, {infeasible} infeasible agreed", shapes.len()))
}

// 5 ---------------------------------------------------------------------------

fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    100.0 * wins / pairs
}

fn auc_oracle() -> Outcome {
    let mut worst = 0.0f64;
    let mut r = rng(5);
    for set in 0..100 {
        let n = r.random_range(2..=200);
        let levels = if set % 2 == 0 { r.random_range(1..=4) } else { 0 };
        let mut labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = labels
            .iter()
            .map(|&l| {
                let x: f64 = r.random_range(0.0..1.0) + if l { 0.3 } else { 0.0 };
                if levels > 0 { (x * levels as f64).floor() } else { x }
            })
            .collect();
        let got = auc_from_scores(&scores, &labels).map_err(|e| e.to_string())?;
        let want = pairwise_auc(&scores, &labels);
        worst = worst.max((got - want).abs());
        ensure!((got - want).abs() <= 1e-9, "set {set}: {got} vs oracle {want}");
    }
    Ok(format!("100 sets (half tie-heavy), max abs diff {worst:.1e}"))
}

// 6 ---------------------------------------------------------------------------

fn memo_distance(a: &[char], b: &[char], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
    if i == a.len() {
        return b.len() - j;
    }
    if j == b.len() {
        return a.len() - i;
    }
    if let Some(&d) = memo.get(&(i, j)) {
        return d;
    }
    let d = if a[i] == b[j] {
        memo_distance(a, b, i + 1, j + 1, memo)
    } else {
        1 + memo_distance(a, b, i + 1, j, memo)
            .min(memo_distance(a, b, i, j + 1, memo))
            .min(memo_distance(a, b, i + 1, j + 1, memo))
    };
    memo.insert((i, j), d);
    d
}

fn cer_oracle() -> Outcome {
    let alphabet: Vec<char> = "abc你好世界".chars().collect();
    let mut r = rng(6);
    let mut word = |min: usize| -> Vec<char> {
        let n = r.random_range(min..=8);
        (0..n).map(|_| alphabet[r.random_range(0..alphabet.len())]).collect()
    };
    let cfg = CerConfig::default();
    for k in 0..1000 {
        let (a, b) = (word(0), word(1));
        let want = memo_distance(&a, &b, 0, 0, &mut HashMap::new());
        let got = edit_distance(&a, &b);
        ensure!(got == want, "pair {k} {a:?}/{b:?}: {got} vs oracle {want}");
        let b_str: String = b.iter().collect();
        let a_str: String = a.iter().collect();
        let c = cer_with(&b_str, &a_str, &cfg).map_err(|e| e.to_string())?;
        let want_cer = 100.0 * want as f64 / b.len() as f64;
        ensure!(c == want_cer, "pair {k}: CER {c} vs {want_cer}");
    }
    let avg = macro_average(&[0.64, 2.15, 4.44, 4.32]).map_err(|e| e.to_string())?;
    let shown = round_half_up(avg, 2);
    ensure!(shown == 2.89, "macro average {avg} rounds to {shown}");
    Ok(format!("1000 pairs exact; Mandarin macro average {avg:.4} -> {shown}"))
}

// 7 ---------------------------------------------------------------------------

fn sorted_disjoint(s: &[Segment]) -> bool {
    s.iter().all(|x| x.end_s > x.start_s) && s.windows(2).all(|w| w[0].end_s <= w[1].start_s)
}

fn random_track(r: &mut ChaCha8Rng) -> Vec<f64> {
    let n = r.random_range(1..=400);
    let mut v = Vec::with_capacity(n);
    let mut level: f64 = r.random_range(0.0..1.0);
    for _ in 0..n {
        if r.random_bool(0.08) {
            level = r.random_range(0.0..1.0);
        }
        let noise = r.random_range(-0.25..0.25);
        v.push(match r.random_range(0..10) {
            0 => 0.5,
            1 => level.round(),
            _ => (level + noise).clamp(0.0, 1.0),
        });
    }
    v
}

fn random_post_cfg(r: &mut ChaCha8Rng) -> PostprocessConfig {
    PostprocessConfig {
        smooth_window_frames: 2 * r.random_range(0..4) + 1,
        threshold: r.random_range(0.2..0.8),
        min_voice_ms: r.random_range(0.0..120.0),
        min_silence_ms: r.random_range(0.0..120.0),
        merge_gap_ms: r.random_range(0.0..300.0),
        pad_ms: r.random_range(0.0..100.0),
        max_segment_ms: r.random_range(50.0..1500.0),
    }
}

fn fsm_properties() -> Outcome {
    let mut r = rng(7);
    let shift = 0.01;
    let mut segments = 0;
    for k in 0..1000 {
        let values = random_track(&mut r);
        let cfg = random_post_cfg(&mut r);
        let track = speechstack::dfsmn::PosteriorTrack::single(&values, shift).map_err(|e| e.to_string())?;
        let raw = fsm_segments(&track, &cfg).map_err(|e| e.to_string())?;
        ensure!(sorted_disjoint(&raw), "track {k}: raw segments overlap");
        for s in &raw {
            ensure!(s.duration_s() * 1000.0 >= cfg.min_voice_ms - 1e-6, "track {k}: short voice {s:?}");
        }
        for w in raw.windows(2) {
            ensure!(
                (w[1].start_s - w[0].end_s) * 1000.0 >= cfg.min_silence_ms - 1e-6,
                "track {k}: short gap"
            );
        }
        let refined = vad_segments(&track, &cfg).map_err(|e| e.to_string())?;
        ensure!(sorted_disjoint(&refined), "track {k}: refined segments overlap");
        let end = values.len() as f64 * shift;
        ensure!(
            refined.iter().all(|s| s.start_s >= 0.0 && s.end_s <= end + 1e-9),
            "track {k}: refined segment outside the track"
        );
        let again = refine_segments(&refined, &cfg, &values, shift).map_err(|e| e.to_string())?;
        ensure!(again == refined, "track {k}: refine is not idempotent");

        let decisions = binarize(&smooth_values(&values, cfg.smooth_window_frames).map_err(|e| e.to_string())?, cfg.threshold);
        let mut stream = VadStream::new(&cfg, shift).map_err(|e| e.to_string())?;
        let mut events: Vec<_> = decisions.iter().filter_map(|&d| stream.step_decision(d)).collect();
        events.extend(stream.finish());
        ensure!(
            events_to_segments(&events) == segments_from_decisions(&decisions, &cfg, shift),
            "track {k}: streaming and offline state machines disagree"
        );
        segments += raw.len();
    }
    Ok(format!("1000 tracks, {segments} raw segments checked"))
}

// 8 ---------------------------------------------------------------------------

fn confidence() -> Outcome {
    let cfg = ConfidenceConfig::default();
    let g = |p: &[f64]| geometric_confidence(p, &cfg).map(|c| c.value).map_err(|e| e.to_string());
    ensure!(g(&[0.9, 0.9])? == 0.9, "[0.9, 0.9] -> {}", g(&[0.9, 0.9])?);
    ensure!(g(&[1.0, 0.25])? == 0.5, "[1.0, 0.25] -> {}", g(&[1.0, 0.25])?);
    let mut r = rng(8);
    for k in 0..1000 {
        let n = r.random_range(1..=12);
        let p: Vec<f64> = (0..n).map(|_| r.random_range(0.001..=1.0)).collect();
        let base = g(&p)?;
        let mut shuffled = p.clone();
        for i in (1..n).rev() {
            shuffled.swap(i, r.random_range(0..=i));
        }
        ensure!(g(&shuffled)? == base, "case {k}: order changed the value");
        let i = r.random_range(0..n);
        let mut raised = p.clone();
        raised[i] = r.random_range(p[i]..=1.0);
        ensure!(g(&raised)? >= base, "case {k}: raising a posterior lowered the confidence");
    }
    Ok("examples exact; 1000 permutation and monotonicity cases".into())
}

// 9 ---------------------------------------------------------------------------

fn lid_scorer(json: &str) -> Result<TableScorer, String> {
    let spec: MockScorerSpec = serde_json::from_str(json).map_err(|e| e.to_string())?;
    TableScorer::from_spec(&spec, Some(LidRegistry::builtin())).map_err(|e| e.to_string())
}

/// Every label sequence up to `max_len` followed by the end token, with its
/// summed log posterior; zero-probability steps are excluded.
fn enumerate(scorer: &TableScorer, max_len: usize) -> Vec<(f64, Vec<usize>)> {
    let (sos, eos, v) = (scorer.sos(), scorer.eos(), scorer.vocab_size());
    let mut out = Vec::new();
    let mut stack = vec![(vec![sos], 0.0)];
    while let Some((prefix, score)) = stack.pop() {
        let dist = scorer.next_distribution(&prefix).unwrap();
        let labels = prefix.len() - 1;
        for tok in 0..v {
            let p = dist[tok];
            if p == 0.0 || tok == sos || (labels == max_len && tok != eos) {
                continue;
            }
            let mut next = prefix.clone();
            next.push(tok);
            if tok == eos {
                out.push((score + p.ln(), next));
            } else {
                stack.push((next, score + p.ln()));
            }
        }
    }
    out.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    out
}

fn lid_decoding() -> Outcome {
    let reg = LidRegistry::builtin();
    let zh = lid_scorer(
        r#"{"entries": [
            {"prefix": [], "probs": {"zh": 0.9, "en": 0.1}},
            {"prefix": ["zh"], "probs": {"yue": 0.8, "<eos>": 0.2}}
        ]}"#,
    )?;
    let res = lid_decode(&zh, reg, 4).map_err(|e| e.to_string())?;
    ensure!(res.language == "zh" && res.dialect.as_deref() == Some("yue"), "zh case gave {res:?}");
    ensure!(res.confidence == (0.9 + 0.8) / 2.0, "zh confidence {}", res.confidence);
    let fr = lid_scorer(
        r#"{"entries": [
            {"prefix": [], "probs": {"fr": 0.7, "de": 0.3}},
            {"prefix": ["fr"], "probs": {"<eos>": 1.0}}
        ]}"#,
    )?;
    let res = lid_decode(&fr, reg, 4).map_err(|e| e.to_string())?;
    ensure!(res.language == "fr" && res.dialect.is_none(), "fr case gave {res:?}");
    ensure!(res.confidence == 0.7, "fr confidence {}", res.confidence);

    let mut r = rng(9);
    let mut compared = 0;
    for k in 0..300 {
        let v = r.random_range(3..=5);
        let mut scorer = TableScorer::new(v, 0, 1).map_err(|e| e.to_string())?;
        let random_dist = |r: &mut ChaCha8Rng| {
            let w: Vec<f64> = (0..v)
                .map(|i| if i == 0 || r.random_bool(0.15) { 0.0 } else { f64::from(r.random_range(1..=4u8)) })
                .collect();
            let s: f64 = w.iter().sum();
            if s == 0.0 {
                let mut d = vec![0.0; v];
                d[1] = 1.0;
                d
            } else {
                w.iter().map(|x| x / s).collect()
            }
        };
        scorer.insert(&[], random_dist(&mut r)).map_err(|e| e.to_string())?;
        for a in 2..v {
            scorer.insert(&[a], random_dist(&mut r)).map_err(|e| e.to_string())?;
        }
        let all = enumerate(&scorer, 2);
        let beam = beam_search(&scorer, all.len().max(1), 2).map_err(|e| format!("case {k}: {e}"))?;
        ensure!(beam.len() == all.len(), "case {k}: {} hypotheses vs {} enumerated", beam.len(), all.len());
        for (h, (score, toks)) in beam.iter().zip(&all) {
            ensure!(&h.tokens == toks, "case {k}: order {:?} vs {toks:?}", h.tokens);
            ensure!((h.score - score).abs() <= 1e-12, "case {k}: score {} vs {score}", h.score);
        }
        let narrow = beam_search(&scorer, 1, 2).map_err(|e| e.to_string())?;
        ensure!(narrow[0].score <= all[0].0 + 1e-12, "case {k}: beam beat the exhaustive optimum");
        compared += all.len();
    }
    Ok(format!("zh/fr mock cases exact; 300 toy vocabularies, {compared} ranked hypotheses match"))
}

// 10 --------------------------------------------------------------------------

fn clean_corpus(n: usize) -> Vec<(String, LanguageStyle)> {
    let han: Vec<char> = "我们今天天气很好明天去公园学习工作朋友中国北京上海电话时间问题音乐".chars().collect();
    let words = [
        "the", "quick", "brown", "fox", "speech", "model", "data", "we", "run", "it", "tests", "today", "don't",
        "3.14", "A", "voice",
    ];
    let zh_marks = ['，', '。', '？', '！'];
    let en_marks = [',', '.', '?', '!'];
    let mut r = rng(10);
    (0..n)
        .map(|i| {
            let clauses = r.random_range(1..=4);
            if i % 2 == 0 {
                let mut s = String::new();
                for c in 0..clauses {
                    for _ in 0..r.random_range(1..=8) {
                        s.push(han[r.random_range(0..han.len())]);
                    }
                    if c + 1 < clauses || r.random_bool(0.9) {
                        s.push(zh_marks[r.random_range(0..4)]);
                    }
                }
                (s, LanguageStyle::ChineseFullwidth)
            } else {
                let mut parts = Vec::new();
                for c in 0..clauses {
                    let k = r.random_range(1..=6);
                    let mut clause: Vec<String> =
                        (0..k).map(|_| words[r.random_range(0..words.len())].to_string()).collect();
                    if c + 1 < clauses || r.random_bool(0.9) {
                        clause.last_mut().unwrap().push(en_marks[r.random_range(0..4)]);
                    }
                    parts.push(clause.join(" "));
                }
                (parts.join(" "), LanguageStyle::EnglishHalfwidth)
            }
        })
        .collect()
}

fn punctuation() -> Outcome {
    let corpus = clean_corpus(500);
    let mut ok = 0;
    let (mut ref_tags, mut marks) = (Vec::new(), 0);
    for (text, style) in &corpus {
        let s = strip_punctuation(text, *style);
        ensure!(s.dropped_marks == 0 && s.unsupported_marks == 0, "{text:?}: marks lost while stripping");
        let back = apply_tags(&s.tagged).map_err(|e| e.to_string())?;
        if &back == text {
            ok += 1;
        } else {
            return Err(format!("{text:?} came back as {back:?}"));
        }
        marks += s.tagged.tags.iter().filter(|t| **t != PuncTag::None).count();
        ref_tags.extend(s.tagged.tags);
    }
    ensure!(ok == corpus.len(), "round trip {ok}/{}", corpus.len());

    use PuncTag::*;
    let hand = punc_prf(&[Comma, Period, Exclamation], &[Comma, Question, Exclamation]).map_err(|e| e.to_string())?;
    let o = &hand.overall;
    ensure!((o.tp, o.fp, o.fn_) == (1, 1, 1), "hand example counts {:?}", (o.tp, o.fp, o.fn_));
    ensure!(o.precision == 50.0 && o.recall == 50.0 && o.f1 == 50.0, "hand example P/R/F1 {o:?}");
    let perfect = punc_prf(&ref_tags, &ref_tags).map_err(|e| e.to_string())?;
    ensure!(perfect.overall.f1 == 100.0, "perfect prediction F1 {}", perfect.overall.f1);
    Ok(format!("500/500 sentences ({marks} marks) round-trip; hand example 50/50/50; perfect F1 100"))
}

// 11 --------------------------------------------------------------------------

fn golden() -> Outcome {
    let stack = common::mock_stack();
    let result = transcribe(&stack.audio, &stack.components(), &PipelineConfig::default()).map_err(|e| e.to_string())?;
    let json = result.to_canonical_json().map_err(|e| e.to_string())?;
    let want = include_str!("golden/pipeline_mock.json");
    ensure!(json == want, "output differs from the golden file:\n{json}");
    let dur = result.audio.duration_s;
    for seg in &result.segments {
        ensure!(0.0 <= seg.start_s && seg.start_s < seg.end_s && seg.end_s <= dur, "segment {seg:?} outside audio");
        for w in seg.word_spans.iter().flatten() {
            ensure!(
                seg.start_s <= w.start && w.start <= w.end && w.end <= seg.end_s,
                "word {w:?} outside its segment"
            );
        }
    }
    // First segment starts at 0.9 s; its first token span starts 0.1 s in.
    let first = result.segments[0].word_spans.as_ref().and_then(|w| w.first()).ok_or("no word spans")?;
    ensure!((first.start - 1.0).abs() < 1e-9, "first word starts at {}", first.start);
    Ok(format!("{} bytes identical; {} segments inside {dur} s", json.len(), result.segments.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("parameter budget", parameter_budget),
        ("streaming equivalence", streaming_equivalence),
        ("desk-scale VAD training", desk_training),
        ("CTC alignment oracle", ctc_oracle),
        ("AUC-ROC oracle", auc_oracle),
        ("CER oracle and macro average", cer_oracle),
        ("segmentation FSM properties", fsm_properties),
        ("confidence", confidence),
        ("LID decoding", lid_decoding),
        ("punctuation", punctuation),
        ("end-to-end golden", golden),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({detail}) [{secs:.1} s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({why}) [{secs:.1} s]", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
