//! Seed plumbing. Every stochastic component takes an explicit `u64` seed;
//! nested components derive child seeds through `derive_seed` so that the
//! same (base seed, stream tag) pair always yields the same stream,
//! independent of evaluation order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer. Decorrelates sequential stream tags.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a base seed and a stream tag.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix64(base ^ splitmix64(stream))
}

/// Deterministic RNG for a given seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream tags for the fixed derivation points in the pipeline.
pub mod stream {
    pub const DATA: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const NET_INIT: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const TRIAL: u64 = 5;
    pub const CELL: u64 = 6;
    pub const SAMPLE: u64 = 7;
}

/// Fisher-Yates shuffle. Pinned here rather than taken from the rand crate
/// so permutations stay stable across dependency upgrades.
pub fn shuffle<T, R: rand::Rng>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}
