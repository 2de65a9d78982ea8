//! Seed derivation for deterministic parallel runs.
//!
//! Every experiment takes one user-facing `seed`; per-point / per-iteration
//! generators are derived with a splitmix64 mix of (seed, index) so grid
//! points can run on any number of threads and still produce identical
//! streams.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// splitmix64 step; good avalanche, cheap, stable across platforms.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a base seed with a stream index into an independent sub-seed.
pub fn mix(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

/// Deterministic generator for stream `index` of experiment `seed`.
pub fn stream(seed: u64, index: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(mix(seed, index))
}
