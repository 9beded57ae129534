//! Reproducible random streams.
//!
//! Every stream is a ChaCha8 generator keyed by the master seed and selected
//! by a stream id, so replication `r` or chain `c` can be regenerated in
//! isolation without replaying anything else.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// SplitMix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a path component.
pub fn split(seed: u64, index: u64) -> u64 {
    mix64(seed ^ mix64(index.wrapping_add(0xA076_1D64_78BD_642F)))
}

/// Generator for `seed`; same seed, same stream.
pub fn rng(seed: u64) -> StreamRng {
    let mut key = [0u8; 32];
    let mut s = seed;
    for chunk in key.chunks_mut(8) {
        s = mix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
