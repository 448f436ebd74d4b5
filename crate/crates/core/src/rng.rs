//! Seeded random streams.
//!
//! Every consumer of randomness derives its generator from a root seed and a
//! stream name, so adding a new consumer never shifts the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Generator for the named sub-stream `name` of `seed`.
pub fn stream(seed: u64, name: &str) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, name, u64::MAX))
}

/// Generator for item `index` of a named sub-stream. Per-example draws use this so
/// they do not depend on iteration order or worker count.
pub fn indexed(seed: u64, name: &str, index: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, name, index))
}

pub fn derive_seed(seed: u64, name: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((name.len() as u64).to_le_bytes());
    h.update(name.as_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("sha256 digest has 32 bytes"))
}
