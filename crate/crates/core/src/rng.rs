//! Seed expansion.
//!
//! Every random stream in the pipeline is derived from one top-level seed plus
//! a stream name, so any stage can be re-run on its own and reproduce exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Derive the 32-byte seed for a named stream.
pub fn stream_seed(seed: u64, name: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut out = [0u8; 32];
    out.copy_from_slice(&digest);
    out
}

pub fn stream(seed: u64, name: &str) -> Rng {
    ChaCha8Rng::from_seed(stream_seed(seed, name))
}

/// A stream keyed by name and an index, e.g. one per user.
pub fn indexed_stream(seed: u64, name: &str, index: u64) -> Rng {
    let mut hasher = Sha256::new();
    hasher.update(stream_seed(seed, name));
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut out = [0u8; 32];
    out.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(out)
}
