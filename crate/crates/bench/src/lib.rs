//! Seeded inputs shared by the benchmarks.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use speechstack::audio::AudioBuffer;
use speechstack::ctc_align::CtcFrames;

/// Noise bursts alternating with near-silence every half second, at 16 kHz.
pub fn bursty_audio(seconds: f64, seed: u64) -> AudioBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * 16_000.0) as usize;
    let samples = (0..n)
        .map(|i| {
            let amp = if (i / 8_000) % 2 == 0 { 4_000 } else { 20 };
            rng.random_range(-amp..=amp) as i16
        })
        .collect();
    AudioBuffer::new(samples, 16_000).expect("valid buffer")
}

/// Log-softmaxed random logits of shape `frames x vocab`.
pub fn random_ctc_frames(frames: usize, vocab: usize, seed: u64) -> CtcFrames {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let logits = Array2::from_shape_fn((frames, vocab), |_| rng.random_range(-5.0..5.0));
    CtcFrames::from_logits(logits, 0.04).expect("finite logits")
}

/// Scores on a coarse grid (many ties) with labels correlated to them.
pub fn scored_labels(n: usize, seed: u64) -> (Vec<f64>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let s = (rng.random_range(0.0..1.0f64) * 50.0).floor() / 50.0;
            (s, rng.random_bool(0.2 + 0.6 * s))
        })
        .unzip()
}

/// Random token ids in `1..vocab`.
pub fn random_tokens(len: usize, vocab: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(1..vocab)).collect()
}
