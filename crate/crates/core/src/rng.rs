//! Seeded randomness shared by corpus synthesis, training and generation.
//!
//! Every random draw in the crate goes through [`SeededRng`], a 64-bit
//! permuted congruential generator (PCG-XSL-RR 128/64, `rand_pcg::Pcg64`).
//! Seeds are expanded with the generator's own `seed_from_u64`, so a given
//! `u64` seed produces the same stream on every platform.

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

pub type SeededRng = rand_pcg::Pcg64;

pub fn seeded(seed: u64) -> SeededRng {
    SeededRng::seed_from_u64(seed)
}

/// Standard normal draw (ziggurat method, `rand_distr::StandardNormal`).
pub fn standard_normal(rng: &mut SeededRng) -> f64 {
    rng.sample(StandardNormal)
}

/// Uniform draw in `[0, 1)`.
pub fn unit(rng: &mut SeededRng) -> f64 {
    rng.random::<f64>()
}

/// Index drawn from a discrete distribution given by non-negative weights
/// that sum to `total`. Falls back to the last positive weight when
/// rounding pushes the cumulative sum below the draw.
pub fn categorical(weights: &[f64], total: f64, rng: &mut SeededRng) -> usize {
    let target = unit(rng) * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last_positive = i;
            acc += w;
            if target < acc {
                return i;
            }
        }
    }
    last_positive
}
