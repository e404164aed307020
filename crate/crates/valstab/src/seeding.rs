//! Deterministic, platform-stable hashing used to derive RNG streams.
//!
//! Every randomized step in the pipeline (conversation sampling, answer-order
//! permutations, scripted-backend draws) seeds from here, so runs replay
//! byte-identically on any machine.

use sha2::{Digest, Sha256};

/// Hashes a list of string parts into a 64-bit seed. Parts are
/// length-prefixed so that ("ab","c") and ("a","bc") differ.
pub fn stable_hash(parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_be_bytes());
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    u64::from_be_bytes(digest[..8].try_into().unwrap())
}

/// Derives a child seed from a root seed and a label, for hierarchical
/// stream splitting.
pub fn child_seed(root: u64, label: &str, index: u64) -> u64 {
    stable_hash(&[&root.to_string(), label, &index.to_string()])
}

/// Maps a hash to a uniform draw in [0, 1).
pub fn unit_draw(parts: &[&str]) -> f64 {
    (stable_hash(parts) >> 11) as f64 / (1u64 << 53) as f64
}
