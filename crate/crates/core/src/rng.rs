//! Keyed random streams.
//!
//! Every random draw in the crate comes from a stream identified by
//! `(master seed, domain label, index)`. The ChaCha key is derived from the
//! seed and the FNV-1a hash of the label through SplitMix64; the index selects
//! the ChaCha stream. Results therefore do not depend on how work is split
//! across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(FNV_OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A family of independent streams sharing one seed and one domain label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamKey {
    key: [u8; 32],
}

impl StreamKey {
    pub fn new(seed: u64, domain: &str) -> Self {
        let mut state = seed ^ fnv1a(domain);
        let mut key = [0u8; 32];
        for chunk in key.chunks_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        StreamKey { key }
    }

    /// Derive a sub-family, e.g. one per Picard iteration.
    pub fn child(&self, label: &str, index: u64) -> Self {
        let mut idx = index;
        let mut state = u64::from_le_bytes(self.key[..8].try_into().unwrap()) ^ fnv1a(label) ^ splitmix64(&mut idx);
        let mut key = self.key;
        for (i, chunk) in key.chunks_mut(8).enumerate() {
            let v = u64::from_le_bytes(chunk.try_into().unwrap()) ^ splitmix64(&mut state);
            chunk.copy_from_slice(&v.rotate_left(i as u32 * 7).to_le_bytes());
        }
        StreamKey { key }
    }

    pub fn stream(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(index);
        rng
    }
}
