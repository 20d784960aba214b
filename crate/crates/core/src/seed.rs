//! Deterministic seed derivation.
//!
//! Every stochastic component takes an explicit `u64` seed and derives
//! per-task child seeds from it, so results are reproducible regardless of
//! scheduling order. Derivation must be stable across platforms and program
//! runs, which rules out `std::hash` (randomized) in favor of FNV-1a plus a
//! splitmix64 finalizer.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; bijective on u64, good avalanche.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// FNV-1a over raw bytes. Stable across platforms and runs.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Child seed for a named subtask, e.g. one (item, run) call or one stratum.
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    let mixed = base
        ^ stable_hash(tag.as_bytes())
        ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    splitmix64(mixed)
}

/// RNG seeded for a named subtask.
pub fn derive_rng(base: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tag, index))
}
