//! Seed derivation. Every stochastic draw in a run comes from a ChaCha8
//! stream whose seed is a pure function of the run seed and a path of
//! integers (epoch, sample index, purpose tag, ...), so results do not depend
//! on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type RunRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `path` into `seed`. Distinct paths give statistically independent seeds.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_from(seed: u64) -> RunRng {
    RunRng::seed_from_u64(seed)
}

pub fn derived_rng(seed: u64, path: &[u64]) -> RunRng {
    rng_from(derive_seed(seed, path))
}

/// Purpose tags used as the first element of derivation paths.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const AUGMENT: u64 = 3;
    pub const DROPOUT: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const SYNTHETIC: u64 = 6;
    pub const PROBE: u64 = 7;
}
