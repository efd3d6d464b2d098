//! DFSMN frame classifier for voice activity detection.
//!
//! A stack of feed-forward blocks, each carrying a learned depthwise memory
//! over a window of past (and optionally future) projected frames. With no
//! look-ahead the network is causal and can run incrementally through
//! [`StreamState`], which keeps the last `lookback * stride` projected frames
//! of every block.

mod forward;
mod io;
mod params;
mod synth;
mod train;

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{concatenate, s, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureMatrix;

pub use io::{load_weights, read_weights, save_weights, write_weights, WEIGHT_FORMAT_VERSION};
pub use params::{Affine, BlockParams, DfsmnParams, TensorSpec};
pub use synth::{
    build_dataset, featurize_corpus, generate_synthetic_corpus, CorpusSpec, LabelSet, Region, RegionKind,
    SyntheticUtterance,
};
pub use train::{
    batch_loss, frame_f1, train_frame_classifier, EpochStats, LabeledUtterance, TrainConfig,
    TrainReport,
};

#[derive(Debug, Error)]
pub enum DfsmnError {
    #[error("invalid DFSMN config: {0}")]
    InvalidConfig(String),
    #[error("feature dimension {actual} does not match model input {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("input features contain non-finite values")]
    NonFinite,
    #[error("streaming requires a causal model (lookahead_order == 0), got {0}")]
    NotCausal(usize),
    #[error("stream state belongs to a different model")]
    ForeignState,
    #[error("empty chunk")]
    EmptyChunk,
    #[error("invalid posterior track: {0}")]
    InvalidTrack(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("utterance {index}: {frames} frames but {labels} label rows")]
    LabelMismatch {
        index: usize,
        frames: usize,
        labels: usize,
    },
    #[error("invalid labels: {0}")]
    InvalidLabels(String),
    #[error("weight file format error: {0}")]
    Format(String),
    #[error("weight file version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("weight file truncated: {0}")]
    Truncated(String),
    #[error("weight shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DfsmnConfig {
    pub num_blocks: usize,
    pub hidden_size: usize,
    pub proj_size: usize,
    pub lookback_order: usize,
    pub lookahead_order: usize,
    /// Tap dilation.
    pub stride: usize,
    pub dropout: f64,
    pub num_outputs: usize,
    pub input_dim: usize,
}

impl Default for DfsmnConfig {
    fn default() -> Self {
        Self::offline_vad()
    }
}

impl DfsmnConfig {
    /// 8 blocks, 256 hidden, 128 projection, 20 taps either side.
    pub fn offline_vad() -> Self {
        Self {
            num_blocks: 8,
            hidden_size: 256,
            proj_size: 128,
            lookback_order: 20,
            lookahead_order: 20,
            stride: 1,
            dropout: 0.05,
            num_outputs: 1,
            input_dim: 80,
        }
    }

    /// Reduced network for CPU-scale training: 4 blocks, 64 hidden, 32
    /// projection, 10 taps either side.
    pub fn desk_vad() -> Self {
        Self {
            num_blocks: 4,
            hidden_size: 64,
            proj_size: 32,
            lookback_order: 10,
            lookahead_order: 10,
            ..Self::offline_vad()
        }
    }

    /// Causal variant of [`offline_vad`](Self::offline_vad).
    pub fn streaming_vad() -> Self {
        Self {
            lookahead_order: 0,
            ..Self::offline_vad()
        }
    }

    /// Three outputs: speech, singing, music.
    pub fn offline_mvad() -> Self {
        Self {
            num_outputs: 3,
            ..Self::offline_vad()
        }
    }

    pub fn num_taps(&self) -> usize {
        self.lookback_order + self.lookahead_order + 1
    }

    pub fn is_causal(&self) -> bool {
        self.lookahead_order == 0
    }

    /// Frames of projected history each block keeps when streaming.
    pub fn cache_len(&self) -> usize {
        self.lookback_order * self.stride
    }

    pub fn validate(&self) -> Result<(), DfsmnError> {
        let bad = |m: &str| Err(DfsmnError::InvalidConfig(m.to_string()));
        if self.num_blocks == 0
            || self.hidden_size == 0
            || self.proj_size == 0
            || self.stride == 0
            || self.input_dim == 0
        {
            return bad("block count, layer sizes, stride and input_dim must be >= 1");
        }
        if !(self.num_outputs == 1 || self.num_outputs == 3) {
            return bad("num_outputs must be 1 (VAD) or 3 (mVAD)");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn channel_names(&self) -> Vec<String> {
        channel_names_for(self.num_outputs)
    }
}

pub const VAD_CHANNEL: &str = "voice";
pub const MVAD_CHANNELS: [&str; 3] = ["speech", "singing", "music"];

fn channel_names_for(k: usize) -> Vec<String> {
    if k == 3 {
        MVAD_CHANNELS.iter().map(|s| s.to_string()).collect()
    } else {
        vec![VAD_CHANNEL.to_string()]
    }
}

/// Per-frame event posteriors, `T x K`. Serialized as
/// `{"frame_shift_s", "channels", "values": [[p; K]; T]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PosteriorRecord", into = "PosteriorRecord")]
pub struct PosteriorTrack {
    values: Array2<f64>,
    frame_shift_s: f64,
    channel_names: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PosteriorRecord {
    frame_shift_s: f64,
    channels: Vec<String>,
    values: Vec<Vec<f64>>,
}

impl From<PosteriorTrack> for PosteriorRecord {
    fn from(t: PosteriorTrack) -> Self {
        Self {
            frame_shift_s: t.frame_shift_s,
            values: t.values.rows().into_iter().map(|r| r.to_vec()).collect(),
            channels: t.channel_names,
        }
    }
}

impl TryFrom<PosteriorRecord> for PosteriorTrack {
    type Error = DfsmnError;

    fn try_from(r: PosteriorRecord) -> Result<Self, Self::Error> {
        let k = r.channels.len();
        if r.values.iter().any(|row| row.len() != k) {
            return Err(DfsmnError::InvalidTrack("row width differs from channel count".into()));
        }
        let flat: Vec<f64> = r.values.into_iter().flatten().collect();
        let arr = Array2::from_shape_vec((flat.len() / k.max(1), k), flat)
            .map_err(|e| DfsmnError::InvalidTrack(e.to_string()))?;
        PosteriorTrack::new(arr, r.frame_shift_s, r.channels)
    }
}

impl PosteriorTrack {
    pub fn new(values: Array2<f64>, frame_shift_s: f64, channel_names: Vec<String>) -> Result<Self, DfsmnError> {
        let k = values.ncols();
        if !(k == 1 || k == 3) {
            return Err(DfsmnError::InvalidTrack(format!("{k} channels, expected 1 or 3")));
        }
        if channel_names.len() != k {
            return Err(DfsmnError::InvalidTrack("channel name count differs from K".into()));
        }
        if k == 3 && channel_names.iter().map(String::as_str).ne(MVAD_CHANNELS) {
            return Err(DfsmnError::InvalidTrack(
                "three-channel tracks must be (speech, singing, music)".into(),
            ));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(DfsmnError::InvalidTrack("posteriors must lie in [0, 1]".into()));
        }
        if !(frame_shift_s > 0.0) {
            return Err(DfsmnError::InvalidTrack("frame shift must be positive".into()));
        }
        Ok(Self {
            values,
            frame_shift_s,
            channel_names,
        })
    }

    /// Single `voice` channel from a slice of posteriors.
    pub fn single(values: &[f64], frame_shift_s: f64) -> Result<Self, DfsmnError> {
        let arr = Array2::from_shape_vec((values.len(), 1), values.to_vec()).expect("shape");
        Self::new(arr, frame_shift_s, vec![VAD_CHANNEL.to_string()])
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn frame_shift_s(&self) -> f64 {
        self.frame_shift_s
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn num_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_channels(&self) -> usize {
        self.values.ncols()
    }

    pub fn channel(&self, k: usize) -> Vec<f64> {
        self.values.column(k).to_vec()
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channel_names.iter().position(|n| n == name)
    }

    /// Frames `[a, b)` of every channel, appended after `self`.
    pub fn append(&mut self, other: &PosteriorTrack) -> Result<(), DfsmnError> {
        if other.channel_names != self.channel_names {
            return Err(DfsmnError::InvalidTrack("channel layout differs".into()));
        }
        self.values = concatenate(Axis(0), &[self.values.view(), other.values.view()])
            .expect("same channel count");
        Ok(())
    }
}

static NEXT_MODEL_ID: AtomicU64 = AtomicU64::new(1);

/// Immutable DFSMN network. Weights are stored in `f32` (the on-disk
/// precision); inference runs in `f64` on a widened copy.
#[derive(Debug, Clone)]
pub struct DfsmnModel {
    id: u64,
    config: DfsmnConfig,
    params: DfsmnParams<f32>,
    wide: DfsmnParams<f64>,
}

impl DfsmnModel {
    pub fn from_params(config: DfsmnConfig, params: DfsmnParams<f32>) -> Result<Self, DfsmnError> {
        config.validate()?;
        let expected = params::tensor_layout(&config);
        let actual = params.tensors();
        if expected.len() != actual.len()
            || expected.iter().zip(&actual).any(|(e, a)| e.len() != a.len())
        {
            return Err(DfsmnError::Shape("parameters do not match config".into()));
        }
        let wide = params.map(|&v| v as f64);
        Ok(Self {
            id: NEXT_MODEL_ID.fetch_add(1, Ordering::Relaxed),
            config,
            params,
            wide,
        })
    }

    /// Training initialisation with a zero output head.
    pub fn init(config: DfsmnConfig, seed: u64) -> Result<Self, DfsmnError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = params::init_params(&config, &mut rng, true);
        Self::from_params(config, p)
    }

    /// Fully random weights and biases.
    pub fn random(config: DfsmnConfig, seed: u64) -> Result<Self, DfsmnError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = params::random_params(&config, &mut rng, 0.1);
        Self::from_params(config, p)
    }

    pub fn config(&self) -> &DfsmnConfig {
        &self.config
    }

    pub fn params(&self) -> &DfsmnParams<f32> {
        &self.params
    }

    pub(crate) fn wide_params(&self) -> &DfsmnParams<f64> {
        &self.wide
    }

    /// Exact number of scalar weights and biases.
    pub fn count_parameters(&self) -> usize {
        count_parameters(&self.config)
    }

    fn check_input(&self, feats: &FeatureMatrix) -> Result<(), DfsmnError> {
        if feats.dim() != self.config.input_dim {
            return Err(DfsmnError::DimensionMismatch {
                expected: self.config.input_dim,
                actual: feats.dim(),
            });
        }
        if !feats.is_finite() {
            return Err(DfsmnError::NonFinite);
        }
        Ok(())
    }

    fn track_from_logits(&self, logits: Array2<f64>, frame_shift_s: f64) -> PosteriorTrack {
        PosteriorTrack::new(
            logits.mapv(forward::sigmoid),
            frame_shift_s,
            self.config.channel_names(),
        )
        .expect("sigmoid outputs are valid posteriors")
    }

    /// Posteriors for every frame of an utterance, zero-padding missing
    /// context at both ends. Dropout is disabled.
    pub fn forward_full(&self, feats: &FeatureMatrix) -> Result<PosteriorTrack, DfsmnError> {
        self.check_input(feats)?;
        let cache = forward::forward_cached::<ChaCha8Rng>(&self.wide, &self.config, feats.frames.view(), None);
        Ok(self.track_from_logits(cache.logits, feats.frame_shift_s))
    }

    pub fn init_stream(&self) -> Result<StreamState, DfsmnError> {
        if !self.config.is_causal() {
            return Err(DfsmnError::NotCausal(self.config.lookahead_order));
        }
        let len = self.config.cache_len();
        Ok(StreamState {
            model_id: self.id,
            caches: (0..self.config.num_blocks)
                .map(|_| Array2::zeros((len, self.config.proj_size)))
                .collect(),
            frames_consumed: 0,
        })
    }

    /// Posteriors for exactly the frames of `chunk`, continuing from `state`.
    pub fn forward_streaming(
        &self,
        state: &mut StreamState,
        chunk: &FeatureMatrix,
    ) -> Result<PosteriorTrack, DfsmnError> {
        if state.model_id != self.id || state.caches.len() != self.config.num_blocks {
            return Err(DfsmnError::ForeignState);
        }
        if chunk.num_frames() == 0 {
            return Err(DfsmnError::EmptyChunk);
        }
        self.check_input(chunk)?;

        let cfg = &self.config;
        let n = chunk.num_frames();
        let cache_len = cfg.cache_len();
        let mut h = forward::affine(chunk.frames.view(), &self.wide.input).mapv(|v| v.max(0.0));
        let mut prev_mem: Option<Array2<f64>> = None;
        for (block, cache) in self.wide.blocks.iter().zip(state.caches.iter_mut()) {
            let proj = forward::affine(h.view(), &block.in_proj);
            let ext = concatenate(Axis(0), &[cache.view(), proj.view()]).expect("proj width");
            let mut mem = forward::memory_rows(ext.view(), cache_len, n, &block.taps, cfg.lookback_order, cfg.stride);
            if let Some(prev) = &prev_mem {
                mem += prev;
            }
            h = forward::affine(mem.view(), &block.out_proj).mapv(|v| v.max(0.0));
            let total = ext.nrows();
            *cache = ext.slice(s![total - cache_len.., ..]).to_owned();
            prev_mem = Some(mem);
        }
        let ff = forward::affine(h.view(), &self.wide.final_ff).mapv(|v| v.max(0.0));
        let logits = forward::affine(ff.view(), &self.wide.head);
        state.frames_consumed += n as u64;
        Ok(self.track_from_logits(logits, chunk.frame_shift_s))
    }
}

/// Parameter count implied by a config.
pub fn count_parameters(cfg: &DfsmnConfig) -> usize {
    params::tensor_layout(cfg).iter().map(TensorSpec::len).sum()
}

/// Incremental inference state for one audio stream.
#[derive(Debug, Clone)]
pub struct StreamState {
    model_id: u64,
    caches: Vec<Array2<f64>>,
    frames_consumed: u64,
}

impl StreamState {
    pub fn frames_consumed(&self) -> u64 {
        self.frames_consumed
    }

    /// Rows of projected history held per block.
    pub fn cache_lens(&self) -> Vec<usize> {
        self.caches.iter().map(|c| c.nrows()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn track_json_round_trip() {
        let t = PosteriorTrack::single(&[0.0, 0.25, 1.0], 0.01).unwrap();
        let json = serde_json::to_string(&t).unwrap();
        assert_eq!(json, r#"{"frame_shift_s":0.01,"channels":["voice"],"values":[[0.0],[0.25],[1.0]]}"#);
        assert_eq!(serde_json::from_str::<PosteriorTrack>(&json).unwrap(), t);
        let bad = r#"{"frame_shift_s":0.01,"channels":["voice"],"values":[[1.5]]}"#;
        assert!(serde_json::from_str::<PosteriorTrack>(bad).is_err());
        let ragged = r#"{"frame_shift_s":0.01,"channels":["voice"],"values":[[0.1, 0.2]]}"#;
        assert!(serde_json::from_str::<PosteriorTrack>(ragged).is_err());
    }

    fn small_causal() -> DfsmnConfig {
        DfsmnConfig {
            num_blocks: 3,
            hidden_size: 12,
            proj_size: 6,
            lookback_order: 4,
            lookahead_order: 0,
            stride: 2,
            dropout: 0.0,
            num_outputs: 1,
            input_dim: 5,
        }
    }

    fn random_feats(t: usize, d: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMatrix::from_frames(Array2::from_shape_simple_fn((t, d), || rng.random_range(-2.0..2.0)))
    }

    /// Per-frame reference forward written with explicit loops straight from
    /// the block wiring. Shares nothing with the batched implementation.
    fn naive_forward(model: &DfsmnModel, x: &Array2<f64>) -> Vec<Vec<f64>> {
        let cfg = model.config();
        let p = model.params();
        let w = |v: &f32| *v as f64;
        let lin = |a: &Affine<f32>, v: &[f64]| -> Vec<f64> {
            (0..a.weight.nrows())
                .map(|o| w(&a.bias[o]) + (0..v.len()).map(|i| w(&a.weight[[o, i]]) * v[i]).sum::<f64>())
                .collect()
        };
        let relu = |v: Vec<f64>| v.into_iter().map(|z| z.max(0.0)).collect::<Vec<_>>();
        let t_len = x.nrows();
        let mut hidden: Vec<Vec<f64>> = (0..t_len).map(|t| relu(lin(&p.input, x.row(t).as_slice().unwrap()))).collect();
        let mut prev_m: Option<Vec<Vec<f64>>> = None;
        for b in &p.blocks {
            let proj: Vec<Vec<f64>> = hidden.iter().map(|h| lin(&b.in_proj, h)).collect();
            let mut m = vec![vec![0.0; cfg.proj_size]; t_len];
            for t in 0..t_len {
                for c in 0..cfg.proj_size {
                    let mut acc = 0.0;
                    for k in 0..cfg.num_taps() {
                        let j = t as isize + (k as isize - cfg.lookback_order as isize) * cfg.stride as isize;
                        if j >= 0 && (j as usize) < t_len {
                            acc += w(&b.taps[[c, k]]) * proj[j as usize][c];
                        }
                    }
                    m[t][c] = acc + prev_m.as_ref().map_or(0.0, |pm| pm[t][c]);
                }
            }
            hidden = m.iter().map(|mt| relu(lin(&b.out_proj, mt))).collect();
            prev_m = Some(m);
        }
        hidden
            .iter()
            .map(|h| {
                let f = relu(lin(&p.final_ff, h));
                lin(&p.head, &f).into_iter().map(|z| 1.0 / (1.0 + (-z).exp())).collect()
            })
            .collect()
    }

    #[test]
    fn reference_scale_parameter_count() {
        let n = count_parameters(&DfsmnConfig::offline_vad());
        assert_eq!(n, 656_129);
        assert!((500_000..=700_000).contains(&n));
        assert!((500_000..=700_000).contains(&count_parameters(&DfsmnConfig::streaming_vad())));
        assert!((500_000..=700_000).contains(&count_parameters(&DfsmnConfig::offline_mvad())));
    }

    #[test]
    fn hand_counted_tiny_model() {
        // input 1*2+2, block (2*1+1) + 1 tap + (1*2+2), ff 2*2+2, head 2*1+1
        let cfg = DfsmnConfig {
            num_blocks: 1,
            hidden_size: 2,
            proj_size: 1,
            lookback_order: 0,
            lookahead_order: 0,
            stride: 1,
            dropout: 0.0,
            num_outputs: 1,
            input_dim: 1,
        };
        assert_eq!(count_parameters(&cfg), 21);
        let a = DfsmnModel::random(cfg.clone(), 1).unwrap();
        let b = DfsmnModel::init(cfg, 2).unwrap();
        assert_eq!(a.count_parameters(), b.count_parameters());
        assert_eq!(a.params().num_scalars(), 21);
    }

    #[test]
    fn config_validation() {
        let mut c = small_causal();
        c.num_outputs = 2;
        assert!(c.validate().is_err());
        let mut c = small_causal();
        c.dropout = 1.0;
        assert!(c.validate().is_err());
        let mut c = small_causal();
        c.hidden_size = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_model_gives_one_half() {
        let cfg = small_causal();
        let model = DfsmnModel::from_params(cfg.clone(), DfsmnParams::zeros(&cfg)).unwrap();
        let out = model.forward_full(&random_feats(9, 5, 0)).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.5));
        let init = DfsmnModel::init(cfg, 4).unwrap();
        let out = init.forward_full(&random_feats(9, 5, 0)).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn single_frame_shape() {
        let model = DfsmnModel::random(small_causal(), 3).unwrap();
        let out = model.forward_full(&random_feats(1, 5, 1)).unwrap();
        assert_eq!(out.values().dim(), (1, 1));
        assert_eq!(out.channel_names(), ["voice"]);
    }

    #[test]
    fn input_errors() {
        let model = DfsmnModel::random(small_causal(), 3).unwrap();
        assert!(matches!(
            model.forward_full(&random_feats(4, 6, 1)),
            Err(DfsmnError::DimensionMismatch { expected: 5, actual: 6 })
        ));
        let mut f = random_feats(4, 5, 1);
        f.frames[[2, 2]] = f64::NAN;
        assert!(matches!(model.forward_full(&f), Err(DfsmnError::NonFinite)));
    }

    #[test]
    fn matches_naive_forward() {
        for (cfg, seed) in [
            (small_causal(), 5u64),
            (
                DfsmnConfig {
                    lookahead_order: 3,
                    num_outputs: 3,
                    ..small_causal()
                },
                6,
            ),
        ] {
            let model = DfsmnModel::random(cfg, seed).unwrap();
            let x = random_feats(50, 5, seed + 10);
            let fast = model.forward_full(&x).unwrap();
            let slow = naive_forward(&model, &x.frames);
            for (t, row) in slow.iter().enumerate() {
                for (k, v) in row.iter().enumerate() {
                    assert!((fast.values()[[t, k]] - v).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn stream_requires_causal_model() {
        let model = DfsmnModel::random(DfsmnConfig { lookahead_order: 1, ..small_causal() }, 1).unwrap();
        assert!(matches!(model.init_stream(), Err(DfsmnError::NotCausal(1))));
    }

    #[test]
    fn stream_cache_sizes() {
        let model = DfsmnModel::init(DfsmnConfig::streaming_vad(), 1).unwrap();
        let st = model.init_stream().unwrap();
        assert_eq!(st.cache_lens(), vec![20; 8]);
        assert_eq!(st.frames_consumed(), 0);
        let none = DfsmnModel::init(DfsmnConfig { lookback_order: 0, ..small_causal() }, 1).unwrap();
        assert_eq!(none.init_stream().unwrap().cache_lens(), vec![0; 3]);
    }

    #[test]
    fn stream_states_are_independent() {
        let model = DfsmnModel::random(small_causal(), 9).unwrap();
        let mut a = model.init_stream().unwrap();
        let b = model.init_stream().unwrap();
        model.forward_streaming(&mut a, &random_feats(7, 5, 2)).unwrap();
        assert_eq!(a.frames_consumed(), 7);
        assert_eq!(b.frames_consumed(), 0);
        assert!(b.caches.iter().all(|c| c.iter().all(|&v| v == 0.0)));
        assert!(a.caches.iter().any(|c| c.iter().any(|&v| v != 0.0)));
    }

    #[test]
    fn stream_rejects_foreign_state_and_empty_chunk() {
        let m1 = DfsmnModel::random(small_causal(), 1).unwrap();
        let m2 = DfsmnModel::random(small_causal(), 1).unwrap();
        let mut st = m1.init_stream().unwrap();
        assert!(matches!(
            m2.forward_streaming(&mut st, &random_feats(3, 5, 0)),
            Err(DfsmnError::ForeignState)
        ));
        assert!(matches!(
            m1.forward_streaming(&mut st, &random_feats(0, 5, 0)),
            Err(DfsmnError::EmptyChunk)
        ));
    }

    fn stream_in_chunks(model: &DfsmnModel, x: &FeatureMatrix, sizes: &[usize]) -> Array2<f64> {
        let mut st = model.init_stream().unwrap();
        let mut parts = Vec::new();
        let mut at = 0;
        for &n in sizes {
            let out = model.forward_streaming(&mut st, &x.slice_frames(at, at + n)).unwrap();
            parts.push(out.values().clone());
            at += n;
        }
        assert_eq!(at, x.num_frames());
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        concatenate(Axis(0), &views).unwrap()
    }

    fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn streaming_matches_full_for_fixed_chunkings() {
        let model = DfsmnModel::random(small_causal(), 21).unwrap();
        let x = random_feats(100, 5, 22);
        let full = model.forward_full(&x).unwrap();
        assert!(max_abs_diff(&stream_in_chunks(&model, &x, &[1; 100]), full.values()) < 1e-5);
        assert!(max_abs_diff(&stream_in_chunks(&model, &x, &[7, 3, 90]), full.values()) < 1e-5);
        // First chunk of a fresh stream sees zero history, like the sequence start.
        let first = stream_in_chunks(&model, &x.slice_frames(0, 10), &[10]);
        assert!(max_abs_diff(&first, &full.values().slice(s![0..10, ..]).to_owned()) < 1e-12);
    }

    #[test]
    fn causal_model_ignores_future_frames() {
        let model = DfsmnModel::random(small_causal(), 31).unwrap();
        let x = random_feats(40, 5, 32);
        let base = model.forward_full(&x).unwrap();
        for t in [0usize, 10, 38] {
            let mut y = x.clone();
            y.frames.row_mut(t + 1).mapv_inplace(|v| v + 3.0);
            let out = model.forward_full(&y).unwrap();
            for u in 0..=t {
                assert_eq!(out.values()[[u, 0]], base.values()[[u, 0]]);
            }
            assert_ne!(out.values()[[t + 1, 0]], base.values()[[t + 1, 0]]);
        }
    }

    #[test]
    fn offline_receptive_field_is_bounded() {
        let cfg = DfsmnConfig {
            num_blocks: 2,
            hidden_size: 8,
            proj_size: 4,
            lookback_order: 3,
            lookahead_order: 2,
            stride: 2,
            dropout: 0.0,
            num_outputs: 1,
            input_dim: 3,
        };
        // Per side: blocks * order * stride.
        let (back, ahead) = (2 * 3 * 2, 2 * 2 * 2);
        let model = DfsmnModel::random(cfg, 41).unwrap();
        let x = random_feats(60, 3, 42);
        let base = model.forward_full(&x).unwrap();
        let t = 30;
        for j in 0..60usize {
            let mut y = x.clone();
            y.frames.row_mut(j).mapv_inplace(|v| v + 5.0);
            let out = model.forward_full(&y).unwrap();
            let inside = j + back >= t && j <= t + ahead;
            if !inside {
                assert_eq!(out.values()[[t, 0]], base.values()[[t, 0]], "frame {j}");
            }
        }
    }

    #[test]
    fn posterior_track_validation() {
        assert!(PosteriorTrack::single(&[0.0, 1.0, 0.5], 0.01).is_ok());
        assert!(PosteriorTrack::single(&[1.5], 0.01).is_err());
        assert!(PosteriorTrack::new(Array2::zeros((2, 2)), 0.01, vec!["a".into(), "b".into()]).is_err());
        assert!(PosteriorTrack::new(
            Array2::zeros((2, 3)),
            0.01,
            vec!["music".into(), "singing".into(), "speech".into()]
        )
        .is_err());
        assert!(PosteriorTrack::new(Array2::zeros((2, 3)), 0.01, channel_names_for(3)).is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn posteriors_in_unit_interval(seed in 0u64..1000, scale in 0.1f64..50.0) {
            let model = DfsmnModel::random(DfsmnConfig { lookahead_order: 2, ..small_causal() }, seed).unwrap();
            let mut x = random_feats(20, 5, seed);
            x.frames.mapv_inplace(|v| v * scale);
            let out = model.forward_full(&x).unwrap();
            prop_assert!(out.values().iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn streaming_equivalence_random_chunkings(seed in 0u64..10_000) {
            let model = DfsmnModel::random(small_causal(), 77).unwrap();
            let x = random_feats(64, 5, 78);
            let full = model.forward_full(&x).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut sizes = Vec::new();
            let mut left = 64;
            while left > 0 {
                let n = rng.random_range(1..=left.min(20));
                sizes.push(n);
                left -= n;
            }
            prop_assert!(max_abs_diff(&stream_in_chunks(&model, &x, &sizes), full.values()) < 1e-5);
        }
    }
}
