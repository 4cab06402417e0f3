//! Deterministic RNG stream derivation.
//!
//! Every random draw made by the estimators comes from a ChaCha stream derived
//! from the master seed and a `(domain, a, b)` key. Per-particle work keyed by
//! `(frame, particle)` can then be scheduled on any number of workers without
//! changing the result.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Randomness domains; keeps streams from distinct phases disjoint.
pub mod domain {
    /// Ensemble initialization (keyed by particle index).
    pub const INIT: u64 = 1;
    /// Per-frame propagate/sample/MH work (keyed by frame, particle).
    pub const STEP: u64 = 2;
    /// Per-frame resampling draw (keyed by frame).
    pub const RESAMPLE: u64 = 3;
    /// EM random initialization (keyed by frame).
    pub const EM_INIT: u64 = 4;
    /// Synthetic noise generation (keyed by frame).
    pub const SYNTH: u64 = 5;
    /// Smoothing realizations (keyed by realization index).
    pub const SMOOTH: u64 = 6;
    /// Train/test splitting of corpus pieces.
    pub const SPLIT: u64 = 7;
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent RNG stream from a master seed and a 3-part key.
pub fn stream(master_seed: u64, domain: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut s = splitmix64(master_seed.wrapping_add(GOLDEN));
    s = splitmix64(s ^ domain.wrapping_mul(GOLDEN));
    s = splitmix64(s ^ a.wrapping_mul(GOLDEN));
    s = splitmix64(s ^ b.wrapping_mul(GOLDEN));
    ChaCha8Rng::seed_from_u64(s)
}
