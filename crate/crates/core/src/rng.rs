//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! seeded from a base seed and a tuple of stream coordinates, so any stream
//! can be recreated without replaying the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Mixes `base` with `parts` into a new 64-bit seed.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for p in parts {
        h.update(p.to_le_bytes());
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for stream `parts` under `base`.
pub fn stream(base: u64, parts: &[u64]) -> ChaCha8Rng {
    seeded(derive_seed(base, parts))
}
