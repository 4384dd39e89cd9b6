//! Counter-based random substreams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream identified by a
//! master seed plus a 64-bit stream id. Stream ids are derived by hashing a
//! path of keys (repetition, iteration, purpose, ...), so independent units of
//! work get disjoint streams no matter which thread runs them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags used as path components.
pub mod purpose {
    pub const INITIAL_PROPOSAL: u64 = 1;
    pub const SAMPLE_BATCH: u64 = 2;
    pub const GRID_SEARCH: u64 = 3;
    pub const RESTART: u64 = 4;
    pub const REPETITION: u64 = 5;
    pub const CIC_IS: u64 = 6;
    pub const CE_AIS_GM: u64 = 7;
    pub const CMC: u64 = 8;
}

/// Identifies one random substream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamSeed {
    master: u64,
    key: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl StreamSeed {
    pub fn new(master: u64) -> Self {
        Self { master, key: 0 }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Child stream keyed by `tag`.
    pub fn derive(self, tag: u64) -> Self {
        let key = splitmix64(self.key ^ splitmix64(tag.wrapping_add(0xD1B5_4A32_D192_ED03)));
        Self { master: self.master, key }
    }

    /// Child stream keyed by a path of tags.
    pub fn derive_path(self, tags: &[u64]) -> Self {
        tags.iter().fold(self, |s, &t| s.derive(t))
    }

    pub fn rng(self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(self.key);
        rng
    }
}
