//! Named random sub-streams derived from one seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Simulate,
    Split,
    Init,
    Shuffle,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Simulate => 1,
            Stream::Split => 2,
            Stream::Init => 3,
            Stream::Shuffle => 4,
        }
    }
}

/// Generator for `(seed, stream, index)`. Distinct triples never share a
/// ChaCha stream, so each component can be reproduced on its own.
pub fn stream(seed: u64, which: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((which.tag() << 32) | (index & 0xffff_ffff));
    rng
}
