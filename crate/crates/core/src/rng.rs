//! Seeded random streams.
//!
//! Every consumer of randomness draws from its own ChaCha8 stream, derived from
//! the run seed, a stream name and an index, so adding draws in one place never
//! shifts the values seen elsewhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init,
    Train,
    Shuffle,
    Negative,
    Sample,
    Toy,
    Eval,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Self::Init => 0x696e_6974,
            Self::Train => 0x0074_7261_696e,
            Self::Shuffle => 0x0073_6875_6666_6c65,
            Self::Negative => 0x6e65_6761_7469_7665,
            Self::Sample => 0x7361_6d70_6c65,
            Self::Toy => 0x0074_6f79,
            Self::Eval => 0x6576_616c,
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic generator for `(seed, stream, index)`.
pub fn stream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let s = splitmix(splitmix(seed ^ splitmix(stream.tag())) ^ index);
    ChaCha8Rng::seed_from_u64(s)
}
