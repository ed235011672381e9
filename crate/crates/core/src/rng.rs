//! Seeding scheme.
//!
//! Every random draw in the crate comes from a `ChaCha8Rng` seeded with a
//! 64-bit value. Child seeds are derived with [`child_seed`], which mixes the
//! parent seed and a stream index through SplitMix64:
//!
//! ```text
//! child(parent, k) = splitmix64(parent ^ splitmix64(k + 0x9E3779B97F4A7C15))
//! ```
//!
//! Per-company sampling uses `child(seed, c)`, Monte-Carlo replication `r`
//! uses `child(seed, r)`, so results do not depend on iteration order or on
//! how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn child_seed(parent: u64, stream: u64) -> u64 {
    splitmix64(parent ^ splitmix64(stream.wrapping_add(GOLDEN)))
}

/// Derives a seed along a path of stream indices.
pub fn seed_path(parent: u64, path: &[u64]) -> u64 {
    path.iter().fold(parent, |s, &k| child_seed(s, k))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
