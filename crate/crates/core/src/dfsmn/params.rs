use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::DfsmnConfig;

/// `y = W x + b` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<T> {
    pub in_proj: Affine<T>,
    /// `proj x (lookback + lookahead + 1)`; column `k` multiplies the frame at
    /// offset `(k - lookback) * stride`.
    pub taps: Array2<T>,
    pub out_proj: Affine<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DfsmnParams<T> {
    pub input: Affine<T>,
    pub blocks: Vec<BlockParams<T>>,
    pub final_ff: Affine<T>,
    pub head: Affine<T>,
}

/// Name and shape of one stored tensor, in canonical order.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

pub(crate) fn tensor_layout(cfg: &DfsmnConfig) -> Vec<TensorSpec> {
    let t = |name: String, shape: Vec<usize>| TensorSpec { name, shape };
    let mut specs = vec![
        t("input.weight".into(), vec![cfg.hidden_size, cfg.input_dim]),
        t("input.bias".into(), vec![cfg.hidden_size]),
    ];
    for b in 0..cfg.num_blocks {
        specs.push(t(format!("blocks.{b}.in_proj.weight"), vec![cfg.proj_size, cfg.hidden_size]));
        specs.push(t(format!("blocks.{b}.in_proj.bias"), vec![cfg.proj_size]));
        specs.push(t(format!("blocks.{b}.taps"), vec![cfg.proj_size, cfg.num_taps()]));
        specs.push(t(format!("blocks.{b}.out_proj.weight"), vec![cfg.hidden_size, cfg.proj_size]));
        specs.push(t(format!("blocks.{b}.out_proj.bias"), vec![cfg.hidden_size]));
    }
    specs.push(t("final_ff.weight".into(), vec![cfg.hidden_size, cfg.hidden_size]));
    specs.push(t("final_ff.bias".into(), vec![cfg.hidden_size]));
    specs.push(t("head.weight".into(), vec![cfg.num_outputs, cfg.hidden_size]));
    specs.push(t("head.bias".into(), vec![cfg.num_outputs]));
    specs
}

impl<T: Clone + num_zero::Zero> Affine<T> {
    fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Array2::from_elem((out_dim, in_dim), T::zero()),
            bias: Array1::from_elem(out_dim, T::zero()),
        }
    }
}

impl<T: Clone> Affine<T> {
    fn map<U>(&self, f: impl Fn(&T) -> U) -> Affine<U> {
        Affine {
            weight: self.weight.map(&f),
            bias: self.bias.map(&f),
        }
    }
}

/// Minimal zero trait so the parameter containers work for `f32` and `f64`.
pub mod num_zero {
    pub trait Zero {
        fn zero() -> Self;
    }
    impl Zero for f32 {
        fn zero() -> Self {
            0.0
        }
    }
    impl Zero for f64 {
        fn zero() -> Self {
            0.0
        }
    }
}

impl<T: Clone + num_zero::Zero> DfsmnParams<T> {
    pub fn zeros(cfg: &DfsmnConfig) -> Self {
        Self {
            input: Affine::zeros(cfg.hidden_size, cfg.input_dim),
            blocks: (0..cfg.num_blocks)
                .map(|_| BlockParams {
                    in_proj: Affine::zeros(cfg.proj_size, cfg.hidden_size),
                    taps: Array2::from_elem((cfg.proj_size, cfg.num_taps()), T::zero()),
                    out_proj: Affine::zeros(cfg.hidden_size, cfg.proj_size),
                })
                .collect(),
            final_ff: Affine::zeros(cfg.hidden_size, cfg.hidden_size),
            head: Affine::zeros(cfg.num_outputs, cfg.hidden_size),
        }
    }
}

impl<T: Clone> DfsmnParams<T> {
    pub fn map<U>(&self, f: impl Fn(&T) -> U + Copy) -> DfsmnParams<U> {
        DfsmnParams {
            input: self.input.map(f),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockParams {
                    in_proj: b.in_proj.map(f),
                    taps: b.taps.map(f),
                    out_proj: b.out_proj.map(f),
                })
                .collect(),
            final_ff: self.final_ff.map(f),
            head: self.head.map(f),
        }
    }

    /// Flat views of every tensor in the order of [`tensor_layout`].
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = vec![slice(&self.input.weight), slice1(&self.input.bias)];
        for b in &self.blocks {
            out.push(slice(&b.in_proj.weight));
            out.push(slice1(&b.in_proj.bias));
            out.push(slice(&b.taps));
            out.push(slice(&b.out_proj.weight));
            out.push(slice1(&b.out_proj.bias));
        }
        out.push(slice(&self.final_ff.weight));
        out.push(slice1(&self.final_ff.bias));
        out.push(slice(&self.head.weight));
        out.push(slice1(&self.head.bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        out.push(self.input.weight.as_slice_mut().expect("standard layout"));
        out.push(self.input.bias.as_slice_mut().expect("standard layout"));
        for b in &mut self.blocks {
            out.push(b.in_proj.weight.as_slice_mut().expect("standard layout"));
            out.push(b.in_proj.bias.as_slice_mut().expect("standard layout"));
            out.push(b.taps.as_slice_mut().expect("standard layout"));
            out.push(b.out_proj.weight.as_slice_mut().expect("standard layout"));
            out.push(b.out_proj.bias.as_slice_mut().expect("standard layout"));
        }
        out.push(self.final_ff.weight.as_slice_mut().expect("standard layout"));
        out.push(self.final_ff.bias.as_slice_mut().expect("standard layout"));
        out.push(self.head.weight.as_slice_mut().expect("standard layout"));
        out.push(self.head.bias.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

fn slice<T>(a: &Array2<T>) -> &[T] {
    a.as_slice().expect("standard layout")
}

fn slice1<T>(a: &Array1<T>) -> &[T] {
    a.as_slice().expect("standard layout")
}

fn fill_uniform<R: Rng>(rng: &mut R, data: &mut [f32], bound: f64) {
    if bound <= 0.0 {
        data.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let dist = Uniform::new(-bound, bound).expect("finite bound");
    for v in data {
        *v = dist.sample(rng) as f32;
    }
}

/// He-uniform weights for the ReLU layers, small random memory taps and zero
/// biases. With `zero_head` the output projection starts at zero so every
/// initial posterior is exactly 0.5.
pub(crate) fn init_params<R: Rng>(cfg: &DfsmnConfig, rng: &mut R, zero_head: bool) -> DfsmnParams<f32> {
    let mut p = DfsmnParams::<f32>::zeros(cfg);
    let he = |fan_in: usize| (6.0 / fan_in as f64).sqrt();
    fill_uniform(rng, p.input.weight.as_slice_mut().unwrap(), he(cfg.input_dim));
    for b in &mut p.blocks {
        fill_uniform(rng, b.in_proj.weight.as_slice_mut().unwrap(), (3.0 / cfg.hidden_size as f64).sqrt());
        fill_uniform(rng, b.taps.as_slice_mut().unwrap(), 1.0 / (cfg.num_taps() as f64).sqrt());
        fill_uniform(rng, b.out_proj.weight.as_slice_mut().unwrap(), he(cfg.proj_size));
    }
    fill_uniform(rng, p.final_ff.weight.as_slice_mut().unwrap(), he(cfg.hidden_size));
    if !zero_head {
        fill_uniform(rng, p.head.weight.as_slice_mut().unwrap(), (3.0 / cfg.hidden_size as f64).sqrt());
    }
    p
}

/// Like [`init_params`] with a random head, and with every bias drawn from
/// `U(-bias_scale, bias_scale)`. Used for equivalence and oracle tests where
/// zero biases would hide wiring bugs.
pub(crate) fn random_params<R: Rng>(cfg: &DfsmnConfig, rng: &mut R, bias_scale: f64) -> DfsmnParams<f32> {
    let mut p = init_params(cfg, rng, false);
    fill_uniform(rng, p.input.bias.as_slice_mut().unwrap(), bias_scale);
    for b in &mut p.blocks {
        fill_uniform(rng, b.in_proj.bias.as_slice_mut().unwrap(), bias_scale);
        fill_uniform(rng, b.out_proj.bias.as_slice_mut().unwrap(), bias_scale);
    }
    fill_uniform(rng, p.final_ff.bias.as_slice_mut().unwrap(), bias_scale);
    fill_uniform(rng, p.head.bias.as_slice_mut().unwrap(), bias_scale);
    p
}
