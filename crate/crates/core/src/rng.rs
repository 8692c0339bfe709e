//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! keyed by a stable mix of the run seed and a stream label, so results never
//! depend on scheduling or on how many draws another stream consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a sequence of labels into a new seed.
pub fn derive_seed(seed: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(splitmix64(seed), |acc, &l| splitmix64(acc ^ splitmix64(l)))
}

pub fn stream(seed: u64, labels: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, labels))
}

/// Stream labels used across the crate.
pub mod label {
    pub const GROUND_TRUTH: u64 = 1;
    pub const SAMPLE_CELL: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const DELETION: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const INIT: u64 = 6;
}
