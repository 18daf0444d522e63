//! Seed plumbing. Every random stream in the crate is a ChaCha8 generator
//! whose seed is derived from one user seed and a stable label, so that
//! results do not depend on the order in which components are constructed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type GenRng = ChaCha8Rng;

/// Stable 64-bit seed for `(seed, label, extra...)`.
pub fn derive_seed(seed: u64, label: &str, extra: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    for x in extra {
        h.update(x.to_le_bytes());
    }
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 digest is 32 bytes"))
}

pub fn rng_for(seed: u64, label: &str) -> GenRng {
    GenRng::seed_from_u64(derive_seed(seed, label, &[]))
}

pub fn rng_for_indexed(seed: u64, label: &str, extra: &[u64]) -> GenRng {
    GenRng::seed_from_u64(derive_seed(seed, label, extra))
}
