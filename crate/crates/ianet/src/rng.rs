//! Deterministic, independently derived RNG streams.
//!
//! Every source of randomness in the crate draws from its own stream,
//! derived from a root seed plus a role tag (and usually an index), so
//! consuming one stream never shifts another. This is what makes e.g.
//! "attention disabled" training bit-identical to baseline training.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream role tags.
pub mod stream {
    pub const INIT: u64 = 0x01;
    pub const DATASET: u64 = 0x02;
    pub const DATA_ORDER: u64 = 0x03;
    pub const PROPOSALS: u64 = 0x04;
    pub const MASK: u64 = 0x05;
    pub const SUBSET: u64 = 0x06;
    pub const EVAL: u64 = 0x07;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// ChaCha8 stream keyed by `seed` folded with every tag.
pub fn stream_rng(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut s = splitmix64(seed);
    for &t in tags {
        s = splitmix64(s ^ t.wrapping_mul(0xd1342543de82ef95));
    }
    ChaCha8Rng::seed_from_u64(s)
}
