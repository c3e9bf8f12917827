//! Seed derivation shared by every simulator.
//!
//! A master seed keys a ChaCha8 generator; each `(path, stream)` pair selects
//! one of its 2^64 independent streams via `set_stream(path << 8 | stream)`.
//! Every path is therefore a pure function of `(master_seed, path_index)` and
//! the execution order of paths never affects the draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream labels. Keep values stable: they are part of the reproducibility
/// contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Stream {
    Market = 1,
    Cost = 2,
    Volatility = 3,
    Panel = 4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedSequence {
    master: u64,
}

impl SeedSequence {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn rng(&self, path: u64, stream: Stream) -> ChaCha8Rng {
        debug_assert!(path < (1 << 56), "path index overflows stream id");
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream((path << 8) | stream as u64);
        rng
    }
}
