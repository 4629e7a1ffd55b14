//! Deterministic seed derivation for independent random sub-streams.
//!
//! Every stochastic component (placement, partition, per-client mobility,
//! mini-batch sampling) draws from its own ChaCha stream whose seed is a
//! SplitMix64 fold of the base seed and a tag path. The fold is fixed, so
//! seeds are stable across platforms and toolchains.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags. Values are part of the reproducibility contract.
pub mod tag {
    pub const PLACEMENT: u64 = 1;
    pub const PARTITION: u64 = 2;
    pub const INIT: u64 = 3;
    pub const MOBILE_SET: u64 = 4;
    pub const MOBILITY: u64 = 5;
    pub const BATCH: u64 = 6;
    pub const TRIAL: u64 = 7;
    pub const SYNTHETIC: u64 = 8;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &part| splitmix64(acc ^ splitmix64(part)))
}

pub fn stream(base: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(base, path))
}
