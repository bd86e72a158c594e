//! Seeded random streams.
//!
//! Every stochastic consumer draws from its own ChaCha stream derived from a
//! run seed and a fixed tag, so adding draws in one place never shifts the
//! numbers seen elsewhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub mod tags {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const HIDDEN_DROPOUT: u64 = 3;
    pub const TEMPORAL_MASK: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const VALIDATION_MASK: u64 = 6;
    /// Monte Carlo sample `l` uses `MC_BASE + l`.
    pub const MC_BASE: u64 = 1 << 32;
}

pub fn stream(seed: u64, tag: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng
}
