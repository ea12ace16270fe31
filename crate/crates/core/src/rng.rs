//! Named, splittable deterministic random streams.
//!
//! Every consumer of randomness derives its own ChaCha stream from a
//! `(name, seed, index)` key, so no two consumers ever share state and any
//! single stream can be regenerated in isolation (per image, per iteration).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// Derives the stream for `(name, seed, index)`.
pub fn stream(name: &str, seed: u64, index: u64) -> StreamRng {
    let mut hasher = Sha256::new();
    hasher.update((name.len() as u64).to_le_bytes());
    hasher.update(name.as_bytes());
    hasher.update(seed.to_le_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}
