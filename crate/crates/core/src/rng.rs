//! Seed derivation.
//!
//! Every random stream in a run is a ChaCha8 generator keyed by a seed
//! mixed from the master seed and a path of labels, so streams are
//! independent of scheduling and worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed of `seed` for the given label.
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    mix64(mix64(seed) ^ label.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for the labelled child stream of `seed`.
pub fn stream_rng(seed: u64, label: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, label))
}

/// Stream labels used by the harness.
pub mod label {
    pub const TASKS_BUILD: u64 = 1;
    pub const TASKS_TRANSFER: u64 = 2;
    pub const AGENT: u64 = 3;
    pub const RESET: u64 = 4;
    pub const INIT: u64 = 5;
}
