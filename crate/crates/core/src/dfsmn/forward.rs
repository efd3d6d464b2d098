//! Batch forward and backward passes over one utterance, in `f64`.
//!
//! Wiring per block: `p = W_in h + b_in`, `mem[t] = sum_k taps[:, k] * p[t + (k - lookback) * stride]`
//! (zero outside the sequence), `m = mem + m_prev` (no residual into the first
//! block), `h = relu(W_out m + b_out)`. A ReLU input layer precedes the
//! blocks; a ReLU feed-forward layer and a linear head follow them.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use super::params::{Affine, BlockParams, DfsmnParams};
use super::DfsmnConfig;

pub(crate) fn affine(x: ArrayView2<f64>, layer: &Affine<f64>) -> Array2<f64> {
    let mut y = x.dot(&layer.weight.t());
    y += &layer.bias;
    y
}

fn relu_inplace(z: &mut Array2<f64>) {
    z.mapv_inplace(|v| v.max(0.0));
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Depthwise memory over rows `[offset, offset + n_out)` of `src`. Row
/// `offset + t` is output `t`; any tap landing outside `src` contributes zero.
pub(crate) fn memory_rows(
    src: ArrayView2<f64>,
    offset: usize,
    n_out: usize,
    taps: &Array2<f64>,
    lookback: usize,
    stride: usize,
) -> Array2<f64> {
    let channels = src.ncols();
    let len = src.nrows() as isize;
    let mut out = Array2::<f64>::zeros((n_out, channels));
    for (k, tap) in taps.axis_iter(Axis(1)).enumerate() {
        let shift = (k as isize - lookback as isize) * stride as isize;
        for t in 0..n_out {
            let j = (offset + t) as isize + shift;
            if j < 0 || j >= len {
                continue;
            }
            let mut row = out.row_mut(t);
            Zip::from(&mut row)
                .and(&tap)
                .and(src.row(j as usize))
                .for_each(|o, &a, &p| *o += a * p);
        }
    }
    out
}

pub(crate) struct BlockCache {
    pub(crate) input: Array2<f64>,
    pub(crate) proj: Array2<f64>,
    pub(crate) mem_sum: Array2<f64>,
    pub(crate) pre_act: Array2<f64>,
    pub(crate) drop_mask: Option<Array2<f64>>,
}

/// Everything backprop needs from one forward pass.
pub(crate) struct ForwardCache {
    pub(crate) input: Array2<f64>,
    pub(crate) pre0: Array2<f64>,
    pub(crate) mask0: Option<Array2<f64>>,
    pub(crate) blocks: Vec<BlockCache>,
    pub(crate) last_hidden: Array2<f64>,
    pub(crate) pre_ff: Array2<f64>,
    pub(crate) mask_ff: Option<Array2<f64>>,
    pub(crate) ff_out: Array2<f64>,
    pub(crate) logits: Array2<f64>,
}

fn dropout_mask<R: Rng>(rng: &mut R, shape: (usize, usize), rate: f64) -> Array2<f64> {
    let keep = 1.0 - rate;
    Array2::from_shape_simple_fn(shape, || {
        if rng.random::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    })
}

/// Forward pass keeping intermediates. `dropout` is `(rng, rate)` during
/// training and `None` at inference.
pub(crate) fn forward_cached<R: Rng>(
    params: &DfsmnParams<f64>,
    cfg: &DfsmnConfig,
    x: ArrayView2<f64>,
    mut dropout: Option<(&mut R, f64)>,
) -> ForwardCache {
    let mut mask_for = |shape: (usize, usize)| match dropout.as_mut() {
        Some((rng, rate)) if *rate > 0.0 => Some(dropout_mask(*rng, shape, *rate)),
        _ => None,
    };

    let pre0 = affine(x, &params.input);
    let mut h = pre0.mapv(|v| v.max(0.0));
    let mask0 = mask_for(h.dim());
    if let Some(m) = &mask0 {
        h *= m;
    }

    let n = x.nrows();
    let mut blocks = Vec::with_capacity(params.blocks.len());
    let mut prev_mem: Option<Array2<f64>> = None;
    for block in &params.blocks {
        let proj = affine(h.view(), &block.in_proj);
        let mut mem_sum = memory_rows(proj.view(), 0, n, &block.taps, cfg.lookback_order, cfg.stride);
        if let Some(prev) = &prev_mem {
            mem_sum += prev;
        }
        let pre_act = affine(mem_sum.view(), &block.out_proj);
        let mut out = pre_act.clone();
        relu_inplace(&mut out);
        let drop_mask = mask_for(out.dim());
        if let Some(m) = &drop_mask {
            out *= m;
        }
        prev_mem = Some(mem_sum.clone());
        blocks.push(BlockCache {
            input: std::mem::replace(&mut h, out),
            proj,
            mem_sum,
            pre_act,
            drop_mask,
        });
    }

    let pre_ff = affine(h.view(), &params.final_ff);
    let mut ff_out = pre_ff.mapv(|v| v.max(0.0));
    let mask_ff = mask_for(ff_out.dim());
    if let Some(m) = &mask_ff {
        ff_out *= m;
    }
    let logits = affine(ff_out.view(), &params.head);
    ForwardCache {
        input: x.to_owned(),
        pre0,
        mask0,
        blocks,
        last_hidden: h,
        pre_ff,
        mask_ff,
        ff_out,
        logits,
    }
}

fn accumulate_affine(grad: &mut Affine<f64>, d_out: &Array2<f64>, input: ArrayView2<f64>) {
    grad.weight += &d_out.t().dot(&input);
    grad.bias += &d_out.sum_axis(Axis(0));
}

fn relu_backward(d: &mut Array2<f64>, pre: &Array2<f64>, mask: Option<&Array2<f64>>) {
    if let Some(m) = mask {
        *d *= m;
    }
    Zip::from(d).and(pre).for_each(|g, &z| {
        if z <= 0.0 {
            *g = 0.0;
        }
    });
}

/// Accumulate parameter gradients into `grads` given `d_logits = dL/dlogits`.
pub(crate) fn backward(
    params: &DfsmnParams<f64>,
    cfg: &DfsmnConfig,
    cache: &ForwardCache,
    d_logits: &Array2<f64>,
    grads: &mut DfsmnParams<f64>,
) {
    accumulate_affine(&mut grads.head, d_logits, cache.ff_out.view());
    let mut d = d_logits.dot(&params.head.weight);
    relu_backward(&mut d, &cache.pre_ff, cache.mask_ff.as_ref());
    accumulate_affine(&mut grads.final_ff, &d, cache.last_hidden.view());
    let mut d_hidden = d.dot(&params.final_ff.weight);

    let n = cache.input.nrows();
    let mut d_mem_carry: Option<Array2<f64>> = None;
    for (idx, (block, bc)) in params.blocks.iter().zip(&cache.blocks).enumerate().rev() {
        let gb: &mut BlockParams<f64> = &mut grads.blocks[idx];
        let mut d_pre = d_hidden;
        relu_backward(&mut d_pre, &bc.pre_act, bc.drop_mask.as_ref());
        accumulate_affine(&mut gb.out_proj, &d_pre, bc.mem_sum.view());
        let mut d_mem = d_pre.dot(&block.out_proj.weight);
        if let Some(carry) = d_mem_carry.take() {
            d_mem += &carry;
        }

        let mut d_proj = Array2::<f64>::zeros(bc.proj.dim());
        let lookback = cfg.lookback_order as isize;
        for k in 0..block.taps.ncols() {
            let shift = (k as isize - lookback) * cfg.stride as isize;
            let lo = (-shift).max(0) as usize;
            let hi = ((n as isize) - shift.max(0)).max(0) as usize;
            if lo >= hi {
                continue;
            }
            let src_lo = (lo as isize + shift) as usize;
            let src_hi = (hi as isize + shift) as usize;
            let d_out = d_mem.slice(s![lo..hi, ..]);
            let src = bc.proj.slice(s![src_lo..src_hi, ..]);
            let tap: Array1<f64> = block.taps.column(k).to_owned();
            let tap_grad = (&d_out * &src).sum_axis(Axis(0));
            gb.taps.column_mut(k).zip_mut_with(&tap_grad, |g, v| *g += v);
            let mut d_src = d_proj.slice_mut(s![src_lo..src_hi, ..]);
            d_src.zip_mut_with(&(&d_out * &tap), |g, v| *g += v);
        }
        accumulate_affine(&mut gb.in_proj, &d_proj, bc.input.view());
        d_hidden = d_proj.dot(&block.in_proj.weight);
        if idx > 0 {
            d_mem_carry = Some(d_mem);
        }
    }

    let mut d0 = d_hidden;
    relu_backward(&mut d0, &cache.pre0, cache.mask0.as_ref());
    accumulate_affine(&mut grads.input, &d0, cache.input.view());
}
