//! Counter-based seed derivation.
//!
//! Every parallel unit of work (tree, fold, bootstrap replicate, Monte Carlo
//! replicate, permutation) draws from its own generator whose seed is a pure
//! function of the parent seed and the unit's index. Results therefore never
//! depend on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of child stream `index` under `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Generator for child stream `index` under `seed`.
pub fn stream(seed: u64, index: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, index))
}

/// Generator seeded directly.
pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
