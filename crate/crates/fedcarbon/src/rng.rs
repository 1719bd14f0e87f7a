//! Deterministic seed derivation.
//!
//! Every random decision in a run is drawn from a [`ChaCha8Rng`] whose seed
//! is derived from the experiment's master seed together with a purpose tag
//! and up to two context integers (typically a round number and a client
//! id). The derivation is fixed so that independent implementations can
//! reproduce the exact streams:
//!
//! 1. hash the purpose tag with FNV-1a (64-bit),
//! 2. absorb `master`, the tag hash, `a`, and `b` in that order, where
//!    absorbing means `state = splitmix64(state ^ value)` starting from
//!    `state = 0`.
//!
//! `splitmix64` is the finalizer from Steele et al.'s SplitMix generator.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h = (h ^ u64::from(b)).wrapping_mul(FNV_PRIME);
    }
    h
}

/// Derive a sub-seed from `master` for the given purpose and context.
pub fn derive_seed(master: u64, purpose: &str, a: u64, b: u64) -> u64 {
    let mut state = 0u64;
    state = splitmix64(state ^ master);
    state = splitmix64(state ^ fnv1a(purpose.as_bytes()));
    state = splitmix64(state ^ a);
    state = splitmix64(state ^ b);
    state
}

/// A ChaCha8 generator seeded via [`derive_seed`].
pub fn rng_for(master: u64, purpose: &str, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, purpose, a, b))
}

/// A ChaCha8 generator seeded directly, for module-level seeds that are
/// already explicit in a config section.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
