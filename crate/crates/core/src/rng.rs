//! Deterministic seed derivation.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded from a master
//! seed and a path of labels, so trials and sub-tasks never share state and
//! the schedule of a parallel run cannot change any draw.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a path of labels into the master seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |acc, &p| {
        splitmix64(acc ^ splitmix64(p))
    })
}

pub fn stream(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, path))
}

/// Stream labels used by the simulation harness.
pub mod label {
    pub const DESIGN: u64 = 1;
    pub const MODEL: u64 = 2;
    pub const RESPONSE: u64 = 3;
    pub const BOOTSTRAP: u64 = 4;
    pub const SEARCH: u64 = 5;
}
