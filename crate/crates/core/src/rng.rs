//! Seeded randomness.
//!
//! Every random stream in the crate is a [`SimRng`] derived from a single
//! 64-bit seed. Independent sub-streams (ensemble members, data generation,
//! shot sampling) are obtained with [`split_seed`], so results never depend on
//! the order in which work is scheduled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the crate.
pub type SimRng = ChaCha8Rng;

/// Golden-ratio increment of SplitMix64.
pub const SPLITMIX_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer: a bijective mix of a 64-bit word.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of sub-stream `index` from `base`.
pub fn split_seed(base: u64, index: u64) -> u64 {
    mix64(base.wrapping_add(SPLITMIX_GAMMA.wrapping_mul(index.wrapping_add(1))))
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Standard normal variate via Box–Muller (cosine branch only; one pair of
/// uniforms per call).
pub fn standard_normal(rng: &mut SimRng) -> f64 {
    // u1 in (0, 1] keeps the logarithm finite.
    let u1 = 1.0 - rng.random::<f64>();
    let u2 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn normal(rng: &mut SimRng, mean: f64, std: f64) -> f64 {
    mean + std * standard_normal(rng)
}

/// Fisher–Yates shuffle driven by [`SimRng`].
pub fn shuffle<T>(items: &mut [T], rng: &mut SimRng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}
