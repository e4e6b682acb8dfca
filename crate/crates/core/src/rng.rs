//! Reproducible random streams.
//!
//! All randomness comes from ChaCha8 (`rand_chacha`), keyed by
//! `ChaCha8Rng::seed_from_u64(seed)`. Independent substreams are selected
//! with the 64-bit ChaCha stream id: stream `b < 2^32` belongs to brick `b`
//! during scene sampling, and the [`Purpose`] ids live above `2^63`. Draws in
//! one stream never depend on the order in which other streams are consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::grammar::BrickId;

/// Named non-brick streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    PixelNoise,
    ScoreNoise,
    Planting,
    MessageInit,
    Shuffle,
}

impl Purpose {
    fn stream_id(self) -> u64 {
        let tag = match self {
            Purpose::PixelNoise => 1,
            Purpose::ScoreNoise => 2,
            Purpose::Planting => 3,
            Purpose::MessageInit => 4,
            Purpose::Shuffle => 5,
        };
        (1u64 << 63) | tag
    }
}

/// Keyed stream factory: one key, many independent streams.
#[derive(Clone, Debug)]
pub struct StreamKey {
    base: ChaCha8Rng,
}

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        StreamKey { base: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn stream(&self, id: u64) -> ChaCha8Rng {
        let mut rng = self.base.clone();
        rng.set_stream(id);
        rng
    }

    pub fn brick(&self, brick: BrickId) -> ChaCha8Rng {
        self.stream(brick.0 as u64)
    }

    pub fn purpose(&self, purpose: Purpose) -> ChaCha8Rng {
        self.stream(purpose.stream_id())
    }
}

/// Stream for a purpose under `seed`.
pub fn purpose_stream(seed: u64, purpose: Purpose) -> ChaCha8Rng {
    StreamKey::new(seed).purpose(purpose)
}
