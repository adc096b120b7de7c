//! Deterministic random streams.
//!
//! Every consumer derives its own ChaCha8 stream from a global seed and a
//! path of integer labels (scenario, episode, stream kind, ...). Streams with
//! different paths are independent; equal paths replay bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Labels for the per-episode streams.
pub mod stream {
    pub const INITIAL_BATTERY: u64 = 1;
    pub const ARRIVALS: u64 = 2;
    pub const CHANNEL: u64 = 3;
    pub const AGENT: u64 = 4;
    pub const EXPLORATION: u64 = 5;
    pub const LOOKAHEAD_NOISE: u64 = 6;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a label path into a 64-bit seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(seed), |acc, &label| splitmix64(acc ^ splitmix64(label)))
}

pub fn substream(seed: u64, path: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}

/// FNV-1a, for turning textual identities into stream labels.
pub fn label_of(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}
