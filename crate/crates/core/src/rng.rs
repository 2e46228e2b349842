//! Seed derivation for replicated and parallel work.
//!
//! Every replicate, permutation, or grid cell gets its own seed computed from
//! the base seed and a path of indices, so results do not depend on the
//! order in which parallel work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the child identified by `path` under `base`.
///
/// `derive_seed(s, &[a, b])` hashes `s`, then folds in `a` and `b` one at a
/// time with SplitMix64, so distinct paths give unrelated seeds.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(base), |acc, &p| {
        splitmix64(acc ^ splitmix64(p.wrapping_add(1)))
    })
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
