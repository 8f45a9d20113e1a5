//! Seed derivation. Every random stream in the toolkit comes from one global
//! seed hashed together with a role label, so sub-seeds are stable and
//! independent of the order in which components ask for them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// `SHA-256(seed as little-endian bytes || label)`, truncated to 64 bits.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(seed: u64, label: &str) -> Rng {
    rng(derive_seed(seed, label))
}
