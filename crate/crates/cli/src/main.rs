mod audio_cmds;
mod config;
mod eval_cmds;
mod output;
mod text_cmds;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::FileConfig;

/// Error raised for bad invocations; mapped to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Parser)]
#[command(name = "speechstack", version, about = "Speech pipeline toolkit", propagate_version = true)]
#[command(after_help = "Exit status: 0 on success, 1 on domain errors, 2 on usage errors.\n\
Results go to --out or stdout; diagnostics go to stderr.")]
pub struct Cli {
    /// TOML file overriding module defaults ([fbank], [postprocess], [mvad],
    /// [confidence], [pipeline], [model], [train], [corpus], [cer]).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for batch evaluation and per-segment pipeline work.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Tsv,
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Input WAV (mono 16-bit PCM).
    #[arg(long = "in")]
    pub input: PathBuf,
    /// DFSMN weight file (DFSM format, version 1).
    #[arg(long)]
    pub weights: PathBuf,
    /// CMVN statistics JSON (version 1); features are used raw without it.
    #[arg(long)]
    pub cmvn: Option<PathBuf>,
    #[command(flatten)]
    pub resample: ResampleArg,
}

#[derive(Debug, Args)]
pub struct ResampleArg {
    /// Linearly resample input that is not 16 kHz; such input is rejected otherwise.
    #[arg(long)]
    pub resample: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Log-Mel filterbank features of a WAV file.
    #[command(after_help = "JSON output: {frame_shift_s, frame_len_s, num_frames, dim, frames: [[f64; dim]; T]}.\n\
TSV output: one frame per line.")]
    Fbank {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        cmvn: Option<PathBuf>,
        /// Also write CMVN statistics of this file here.
        #[arg(long)]
        estimate_cmvn: Option<PathBuf>,
        #[command(flatten)]
        resample: ResampleArg,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Offline voice activity segmentation.
    #[command(after_help = "JSON output: one {\"start\", \"end\", \"label\"} object per line.\n\
TSV output: start<TAB>end.\n\
--posteriors-out writes {frame_shift_s, channels, values: [[p]; T]}.")]
    Vad {
        #[command(flatten)]
        model: ModelArgs,
        /// Overrides [postprocess].threshold.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        posteriors_out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Speech, singing and music segmentation with a three-output model.
    #[command(after_help = "JSON output: {\"speech\": [...], \"singing\": [...], \"music\": [...]}.\n\
TSV output: start<TAB>end<TAB>label.")]
    Mvad {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Chunked causal inference with incremental start/end events.
    #[command(after_help = "Output: one {\"kind\": \"voice_start\"|\"voice_end\", \"time_s\"} object per line.")]
    VadStream {
        #[command(flatten)]
        model: ModelArgs,
        /// Frames per inference chunk.
        #[arg(long, default_value_t = 10)]
        chunk_frames: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Train a DFSMN frame classifier on the seeded synthetic corpus.
    #[command(after_help = "Writes weights to --out and CMVN statistics to --cmvn-out;\n\
prints the training report (JSON) to stdout or --report.")]
    TrainVad {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cmvn_out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Task::Vad)]
        task: Task,
        #[arg(long, value_enum, default_value_t = Preset::Desk)]
        preset: Preset,
        /// Drop the look-ahead taps so the model can stream.
        #[arg(long)]
        causal: bool,
        /// Corpus size in minutes (overrides [corpus]).
        #[arg(long)]
        minutes: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// CTC forced alignment of a token sequence against logits.
    #[command(after_help = "--logits: CTCL binary (version 1). --vocab: {\"tokens\": [{\"id\", \"text\"}], \"frame_shift_s\"?}.\n\
--tokens: JSON array of token texts or ids.\n\
Output: {log_prob, tokens: [{token_id, token_text, start_s, end_s}], words: [{text, start_s, end_s, token_indices}]}.")]
    Align {
        #[arg(long)]
        logits: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        tokens: PathBuf,
        /// Encoder frame shift in seconds; defaults to the vocabulary's value, else 0.04.
        #[arg(long)]
        frame_shift: Option<f64>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Insert punctuation from tag predictions, or strip punctuation into tags.
    #[command(after_help = "Apply: input lines {\"tokens\": [...], \"tags\": [...]}, output lines {\"text\"}.\n\
--strip: input lines {\"text\"}, output lines {\"tokens\", \"tags\"}.\n\
Tags: none, comma, period, question, exclamation.")]
    PuncApply {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = StyleArg::Auto)]
        style: StyleArg,
        #[arg(long)]
        strip: bool,
        #[command(flatten)]
        out: OutArgs,
    },
    /// VAD, LID, transcription and punctuation over one recording.
    #[command(after_help = "VAD: --weights (with optional --cmvn) or --posteriors.\n\
--transcripts: {\"outputs\": [{tokens, posteriors, spans?}]} indexed by segment.\n\
--lid: JSON array of table scorers, one per segment.\n\
--tagger: {\"table\": {token: tag}}.\n\
Output schema version 1: {version, audio, text, segments, vad, sentences?}.")]
    Pipeline {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        cmvn: Option<PathBuf>,
        #[arg(long, conflicts_with = "weights")]
        posteriors: Option<PathBuf>,
        #[arg(long)]
        transcripts: PathBuf,
        #[arg(long)]
        lid: Option<PathBuf>,
        #[arg(long)]
        tagger: Option<PathBuf>,
        /// Use the rule tagger that ends each segment with a period.
        #[arg(long, conflicts_with = "tagger")]
        final_period: bool,
        #[command(flatten)]
        resample: ResampleArg,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Frame-level F1, false-alarm and miss rates (plus AUC with --scores).
    #[command(after_help = "Segments: .tsv (start<TAB>end) or JSON lines. Scores: posterior JSON as written by vad.\n\
The frame grid is 25 ms windows every 10 ms.")]
    EvalVad {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        segs: PathBuf,
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Audio duration in seconds.
        #[arg(long)]
        duration: Option<f64>,
        /// Take the duration from this WAV.
        #[arg(long, conflicts_with = "duration")]
        audio: Option<PathBuf>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Character error rate per test set and their macro average.
    #[command(after_help = "Each --ref/--hyp pair is one test set of JSON lines {\"id\", \"text\"}, matched by id.")]
    EvalCer {
        #[arg(long = "ref", required = true)]
        reference: Vec<PathBuf>,
        #[arg(long, required = true)]
        hyp: Vec<PathBuf>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Punctuation precision, recall and F1.
    #[command(after_help = "--ref: JSON lines {\"text\"} (punctuated). --hyp: JSON lines {\"tokens\", \"tags\"}, one per reference line.")]
    EvalPunc {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Utterance-level language and dialect accuracy.
    #[command(after_help = "Both files: JSON lines {\"language\", \"dialect\"?}, aligned by line.")]
    EvalLid {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
        #[command(flatten)]
        out: OutArgs,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Task {
    Vad,
    Mvad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// 4 blocks, 64 hidden, 32 projection, 10 taps each side.
    Desk,
    /// 8 blocks, 256 hidden, 128 projection, 20 taps each side.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StyleArg {
    Auto,
    Chinese,
    English,
}

fn require_file(p: &Path) -> anyhow::Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(usage(format!("no such file: {}", p.display())))
    }
}

fn input_paths(cmd: &Command) -> Vec<&Path> {
    let mut v: Vec<&Path> = Vec::new();
    match cmd {
        Command::Fbank { input, cmvn, .. } => {
            v.push(input);
            v.extend(cmvn.as_deref());
        }
        Command::Vad { model: m, .. } | Command::Mvad { model: m, .. } | Command::VadStream { model: m, .. } => {
            v.extend([m.input.as_path(), m.weights.as_path()]);
            v.extend(m.cmvn.as_deref());
        }
        Command::TrainVad { .. } => {}
        Command::Align { logits, vocab, tokens, .. } => v.extend([logits.as_path(), vocab, tokens]),
        Command::PuncApply { input, .. } => v.push(input),
        Command::Pipeline {
            input,
            weights,
            cmvn,
            posteriors,
            transcripts,
            lid,
            tagger,
            ..
        } => {
            v.extend([input.as_path(), transcripts]);
            for p in [weights, cmvn, posteriors, lid, tagger].into_iter().flatten() {
                v.push(p);
            }
        }
        Command::EvalVad {
            reference,
            segs,
            scores,
            audio,
            ..
        } => {
            v.extend([reference.as_path(), segs]);
            v.extend(scores.as_deref());
            v.extend(audio.as_deref());
        }
        Command::EvalCer { reference, hyp, .. } => {
            v.extend(reference.iter().map(PathBuf::as_path));
            v.extend(hyp.iter().map(PathBuf::as_path));
        }
        Command::EvalPunc { reference, hyp, .. } | Command::EvalLid { reference, hyp, .. } => {
            v.extend([reference.as_path(), hyp])
        }
    }
    v
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(c) = &cli.config {
        require_file(c)?;
    }
    for p in input_paths(&cli.command) {
        require_file(p)?;
    }
    if cli.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    let cfg = match &cli.config {
        Some(p) => FileConfig::load(p).map_err(|e| usage(format!("config {}: {e}", p.display())))?,
        None => FileConfig::default(),
    };
    match &cli.command {
        Command::Fbank { .. }
        | Command::Vad { .. }
        | Command::Mvad { .. }
        | Command::VadStream { .. }
        | Command::TrainVad { .. } => audio_cmds::run(&cli, &cfg),
        Command::Align { .. } | Command::PuncApply { .. } | Command::Pipeline { .. } => text_cmds::run(&cli, &cfg),
        Command::EvalVad { .. } | Command::EvalCer { .. } | Command::EvalPunc { .. } | Command::EvalLid { .. } => {
            eval_cmds::run(&cli, &cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
