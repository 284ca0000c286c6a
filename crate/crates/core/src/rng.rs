//! Counter-based random streams.
//!
//! Every replica of every experiment draws from its own ChaCha8 stream,
//! addressed by `(seed, experiment tag, replica index)`. Streams are
//! independent of scheduling, so results do not depend on the worker count
//! and an interrupted run can resume at any replica index.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Key of a family of replica streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub tag: u64,
}

impl StreamKey {
    pub fn new(seed: u64, tag: &str) -> Self {
        // FNV-1a over the tag
        let tag = tag
            .bytes()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
        StreamKey { seed, tag }
    }

    /// Derived key for a sub-experiment (e.g. one box size of a schedule).
    pub fn child(&self, index: u64) -> Self {
        StreamKey { seed: self.seed, tag: mix(self.tag ^ mix(index)) }
    }

    /// The stream of replica `index`.
    pub fn replica(&self, index: u64) -> StreamRng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&mix(self.seed).to_le_bytes());
        key[8..16].copy_from_slice(&mix(self.seed ^ self.tag).to_le_bytes());
        key[16..24].copy_from_slice(&self.tag.to_le_bytes());
        key[24..].copy_from_slice(&mix(self.tag.rotate_left(17)).to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(index);
        rng
    }
}
