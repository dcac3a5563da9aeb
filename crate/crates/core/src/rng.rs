//! Seeded, portable random streams.
//!
//! Every stochastic step draws from a ChaCha8 stream keyed by a hash of its
//! logical coordinates (experiment seed, cell, user, iteration ...), so runs
//! are reproducible regardless of scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Hashes a seed together with a path of labels into a new 64-bit seed.
pub fn derive_seed(seed: u64, labels: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for label in labels {
        hasher.update((label.len() as u64).to_le_bytes());
        hasher.update(label);
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// A stream keyed by `(seed, labels...)`.
pub fn stream(seed: u64, labels: &[&[u8]]) -> StreamRng {
    seeded(derive_seed(seed, labels))
}
