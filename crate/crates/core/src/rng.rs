//! Deterministic RNG substreams.
//!
//! Streams are keyed by (seed, domain tag, indices) so that per-record work
//! can run in any order or degree of parallelism without changing outputs.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good avalanche for key mixing.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// RNG for a keyed substream of `seed`.
pub fn stream(seed: u64, tag: u64, indices: &[u64]) -> ChaCha8Rng {
    let mut state = mix(seed ^ mix(tag));
    for &ix in indices {
        state = mix(state ^ mix(ix));
    }
    ChaCha8Rng::seed_from_u64(state)
}

/// Stable 64-bit hash of a string key (FNV-1a).
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Domain tags for the pipeline's RNG streams.
pub mod tags {
    pub const SYNTH_RECORD: u64 = 0x01;
    pub const SALIENCY_NOISE: u64 = 0x02;
    pub const WEIGHT_INIT: u64 = 0x03;
    pub const BATCH_SAMPLING: u64 = 0x04;
    pub const COPY_PASTE: u64 = 0x05;
    pub const AUGMENT: u64 = 0x06;
    pub const KMEANS: u64 = 0x07;
}
