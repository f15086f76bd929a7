//! Seed derivation. Every stochastic component takes an explicit seed and
//! derives sub-streams from it so results never depend on call order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed, a stream tag, and an index.
pub fn derive(seed: u64, tag: u64, index: u64) -> u64 {
    mix64(mix64(seed ^ mix64(tag)) ^ index.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn child_rng(seed: u64, tag: u64, index: u64) -> Rng {
    rng(derive(seed, tag, index))
}

/// Uniform draw in [0, 1) from a hash, used where a verdict must be a pure
/// function of (state, seed).
pub fn unit_from_hash(h: u64) -> f64 {
    (mix64(h) >> 11) as f64 / (1u64 << 53) as f64
}

/// FNV-1a over bytes; stable across platforms and builds.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Stream tags, kept in one place so two components never share a stream.
pub mod tag {
    pub const INSTANCES: u64 = 1;
    pub const POLICY: u64 = 2;
    pub const CORRUPTION: u64 = 3;
    pub const INIT: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const ROLLOUT: u64 = 6;
    pub const WORLDS: u64 = 7;
    pub const SPLIT: u64 = 8;
    pub const DONORS: u64 = 9;
    pub const MASK: u64 = 10;
    pub const TREES: u64 = 11;
    pub const MONTE_CARLO: u64 = 12;
    pub const EVAL: u64 = 13;
    pub const DROPOUT: u64 = 14;
    pub const PROBE: u64 = 15;
}
