//! Adam training on per-frame binary cross-entropy.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::forward::{backward, forward_cached, sigmoid};
use super::params::DfsmnParams;
use super::{DfsmnConfig, DfsmnError, DfsmnModel};
use crate::features::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Share of utterances held out for early stopping.
    pub validation_fraction: f64,
    /// Utterances per optimizer step.
    pub batch_size: usize,
    /// Stop after this many epochs without a held-out F1 improvement.
    pub patience: usize,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 20,
            learning_rate: 1e-3,
            validation_fraction: 0.1,
            batch_size: 8,
            patience: 5,
            threshold: 0.5,
        }
    }
}

/// Features with aligned `T x K` 0/1 targets.
#[derive(Debug, Clone)]
pub struct LabeledUtterance {
    pub features: FeatureMatrix,
    pub labels: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub train_utterances: usize,
    pub val_utterances: usize,
}

fn check_dataset(data: &[LabeledUtterance], cfg: &DfsmnConfig) -> Result<(), DfsmnError> {
    if data.is_empty() {
        return Err(DfsmnError::EmptyDataset);
    }
    for (index, u) in data.iter().enumerate() {
        if u.features.num_frames() != u.labels.nrows() {
            return Err(DfsmnError::LabelMismatch {
                index,
                frames: u.features.num_frames(),
                labels: u.labels.nrows(),
            });
        }
        if u.features.dim() != cfg.input_dim {
            return Err(DfsmnError::DimensionMismatch {
                expected: cfg.input_dim,
                actual: u.features.dim(),
            });
        }
        if u.labels.ncols() != cfg.num_outputs {
            return Err(DfsmnError::InvalidLabels(format!(
                "utterance {index} has {} label channels, model has {}",
                u.labels.ncols(),
                cfg.num_outputs
            )));
        }
        if u.labels.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(DfsmnError::InvalidLabels(format!("utterance {index} has non-binary labels")));
        }
        if !u.features.is_finite() {
            return Err(DfsmnError::NonFinite);
        }
    }
    Ok(())
}

fn bce(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

/// Summed BCE and gradient of the summed loss scaled by `scale`.
fn utterance_grad(
    params: &DfsmnParams<f64>,
    cfg: &DfsmnConfig,
    u: &LabeledUtterance,
    rng: Option<&mut ChaCha8Rng>,
    scale: f64,
) -> (f64, DfsmnParams<f64>) {
    let dropout = rng.map(|r| (r, cfg.dropout));
    let cache = forward_cached(params, cfg, u.features.frames.view(), dropout);
    let mut loss = 0.0;
    let mut d = cache.logits.clone();
    ndarray::Zip::from(&mut d).and(&u.labels).for_each(|g, &y| {
        loss += bce(*g, y);
        *g = (sigmoid(*g) - y) * scale;
    });
    let mut grads = DfsmnParams::zeros(cfg);
    backward(params, cfg, &cache, &d, &mut grads);
    (loss, grads)
}

fn loss_on(params: &DfsmnParams<f64>, cfg: &DfsmnConfig, batch: &[LabeledUtterance]) -> f64 {
    let n: usize = batch.iter().map(|u| u.labels.len()).sum();
    let total: f64 = batch
        .iter()
        .map(|u| {
            let cache = forward_cached::<ChaCha8Rng>(params, cfg, u.features.frames.view(), None);
            cache.logits.iter().zip(u.labels.iter()).map(|(&z, &y)| bce(z, y)).sum::<f64>()
        })
        .sum();
    total / n.max(1) as f64
}

/// Mean BCE per frame-channel over `batch`, with dropout off.
pub fn batch_loss(model: &DfsmnModel, batch: &[LabeledUtterance]) -> f64 {
    loss_on(model.wide_params(), model.config(), batch)
}

/// Micro-averaged frame F1 over all channels, in `[0, 1]`. Returns 1 when
/// there are no positives in either labels or predictions.
pub fn frame_f1(model: &DfsmnModel, data: &[LabeledUtterance], threshold: f64) -> Result<f64, DfsmnError> {
    let (mut tp, mut fp, mut fneg) = (0u64, 0u64, 0u64);
    for u in data {
        let post = model.forward_full(&u.features)?;
        for (&p, &y) in post.values().iter().zip(u.labels.iter()) {
            match (p >= threshold, y == 1.0) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                _ => {}
            }
        }
    }
    let denom = 2 * tp + fp + fneg;
    Ok(if denom == 0 { 1.0 } else { 2.0 * tp as f64 / denom as f64 })
}

struct Adam {
    m: DfsmnParams<f64>,
    v: DfsmnParams<f64>,
    step: i32,
    lr: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(cfg: &DfsmnConfig, lr: f64) -> Self {
        Self {
            m: DfsmnParams::zeros(cfg),
            v: DfsmnParams::zeros(cfg),
            step: 0,
            lr,
        }
    }

    fn update(&mut self, params: &mut DfsmnParams<f64>, grads: &DfsmnParams<f64>) {
        self.step += 1;
        let c1 = 1.0 - Self::B1.powi(self.step);
        let c2 = 1.0 - Self::B2.powi(self.step);
        let g_all = grads.tensors();
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(g_all)
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            for i in 0..p.len() {
                m[i] = Self::B1 * m[i] + (1.0 - Self::B1) * g[i];
                v[i] = Self::B2 * v[i] + (1.0 - Self::B2) * g[i] * g[i];
                p[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

fn add_into(acc: &mut DfsmnParams<f64>, g: &DfsmnParams<f64>) {
    for (a, b) in acc.tensors_mut().into_iter().zip(g.tensors()) {
        a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
    }
}

fn snapshot(cfg: &DfsmnConfig, params: &DfsmnParams<f64>) -> Result<DfsmnModel, DfsmnError> {
    DfsmnModel::from_params(cfg.clone(), params.map(|&v| v as f32))
}

/// Train a fresh model on `data`. Returns the checkpoint with the best
/// held-out frame F1 (ties keep the earlier epoch). Deterministic for a given
/// `train.seed`, independent of the rayon thread count.
pub fn train_frame_classifier(
    data: &[LabeledUtterance],
    model_cfg: &DfsmnConfig,
    train: &TrainConfig,
) -> Result<(DfsmnModel, TrainReport), DfsmnError> {
    model_cfg.validate()?;
    check_dataset(data, model_cfg)?;
    if train.batch_size == 0 || !(train.learning_rate > 0.0) || !(0.0..1.0).contains(&train.validation_fraction) {
        return Err(DfsmnError::InvalidConfig(
            "batch_size >= 1, learning_rate > 0 and validation_fraction in [0, 1) required".into(),
        ));
    }

    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(train.seed));
    let n_val = ((data.len() as f64) * train.validation_fraction).round() as usize;
    let n_val = n_val.min(data.len() - 1);
    let val: Vec<LabeledUtterance> = order[..n_val].iter().map(|&i| data[i].clone()).collect();
    let train_idx: Vec<usize> = order[n_val..].to_vec();
    let train_set: Vec<LabeledUtterance> = train_idx.iter().map(|&i| data[i].clone()).collect();
    // Without a held-out split, early stopping falls back to training F1.
    let monitor = if val.is_empty() { &train_set } else { &val };

    let init = DfsmnModel::init(model_cfg.clone(), train.seed)?;
    let mut params = init.wide_params().clone();
    let initial_loss = loss_on(&params, model_cfg, &train_set[..train_set.len().min(train.batch_size)]);
    let mut adam = Adam::new(model_cfg, train.learning_rate);

    let mut best = snapshot(model_cfg, &params)?;
    let mut best_f1 = frame_f1(&best, monitor, train.threshold)?;
    let mut best_epoch = 0;
    let mut history = Vec::new();
    let mut since_best = 0;

    for epoch in 1..=train.epochs {
        let mut epoch_order: Vec<usize> = (0..train_set.len()).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(train.seed);
        shuffle_rng.set_stream(epoch as u64);
        epoch_order.shuffle(&mut shuffle_rng);

        let (mut loss_sum, mut count) = (0.0, 0usize);
        for batch in epoch_order.chunks(train.batch_size) {
            let n: usize = batch.iter().map(|&i| train_set[i].labels.len()).sum();
            let scale = 1.0 / n as f64;
            let parts: Vec<(f64, DfsmnParams<f64>)> = batch
                .par_iter()
                .map(|&i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(train.seed ^ 0x5eed_d40f);
                    rng.set_stream(((epoch as u64) << 32) | i as u64);
                    let rng = (model_cfg.dropout > 0.0).then_some(&mut rng);
                    utterance_grad(&params, model_cfg, &train_set[i], rng, scale)
                })
                .collect();
            let mut grads = DfsmnParams::zeros(model_cfg);
            for (l, g) in &parts {
                loss_sum += l;
                add_into(&mut grads, g);
            }
            count += n;
            adam.update(&mut params, &grads);
        }

        let candidate = snapshot(model_cfg, &params)?;
        let val_f1 = frame_f1(&candidate, monitor, train.threshold)?;
        history.push(EpochStats {
            epoch,
            train_loss: loss_sum / count as f64,
            val_f1,
        });
        if val_f1 > best_f1 {
            best_f1 = val_f1;
            best_epoch = epoch;
            best = candidate;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= train.patience {
                break;
            }
        }
    }

    Ok((
        best,
        TrainReport {
            initial_loss,
            epochs: history,
            best_epoch,
            best_val_f1: best_f1,
            train_utterances: train_set.len(),
            val_utterances: val.len(),
        },
    ))
}
