//! Seeded random streams.
//!
//! Every random draw in the crate comes from a [`ChaCha12Rng`] seeded from a
//! 64-bit value. Independent tasks (one per query, one per Monte Carlo job)
//! get their own stream via [`derive_seed`], so results do not depend on
//! scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type StreamRng = ChaCha12Rng;

pub fn seeded(seed: u64) -> StreamRng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Derives the seed of task `index` from a master seed (SplitMix64 finalizer
/// applied to a golden-ratio stride).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derived(master: u64, index: u64) -> StreamRng {
    seeded(derive_seed(master, index))
}
