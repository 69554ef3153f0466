//! Reproducible random streams.
//!
//! Every logical stream is a ChaCha8 generator keyed by `(seed, experiment)`
//! and selected by a stream index, so parallel workers can draw independent,
//! order-free samples: stream `k` yields the same numbers no matter which
//! thread consumes it or when.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a, used to turn experiment names into stable key material.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Generator for stream `stream` of experiment `experiment` under `seed`.
pub fn stream_rng(seed: u64, experiment: &str, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&fnv1a(experiment.as_bytes()).to_le_bytes());
    key[16..24].copy_from_slice(&(experiment.len() as u64).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}
