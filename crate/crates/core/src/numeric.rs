//! Small numerical helpers shared across modules: stable log-sum-exp,
//! categorical draws from log-weights, and seed derivation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `ln Σ exp(x_i)` with max-subtraction. Returns `-inf` for an empty slice or
/// when every entry is `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Normalizes log-weights into probabilities.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|&x| (x - lse).exp()).collect()
}

/// Inverse-CDF draw from unnormalized log-weights given a uniform `u ∈ [0,1)`.
pub fn sample_log_weights(log_weights: &[f64], u: f64) -> usize {
    let probs = softmax(log_weights);
    sample_probs(&probs, u)
}

/// Inverse-CDF draw from a probability vector given a uniform `u ∈ [0,1)`.
/// Zero-probability entries are never returned.
pub fn sample_probs(probs: &[f64], u: f64) -> usize {
    let total: f64 = probs.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        last_positive = i;
        acc += p;
        if target < acc {
            return i;
        }
    }
    last_positive
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a base seed and a counter tuple.
pub fn derive_seed(seed: u64, counters: &[u64]) -> u64 {
    counters.iter().fold(mix64(seed), |acc, &c| {
        mix64(acc ^ mix64(c.wrapping_add(0x632B_E59B_D9B4_E019)))
    })
}

/// A ChaCha stream keyed by `(seed, counters...)`.
pub fn keyed_rng(seed: u64, counters: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, counters))
}
