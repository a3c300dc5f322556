//! Seed derivation. Every random choice in the pipeline flows from one
//! root seed through named sub-seeds, so independent stages can be
//! re-run in isolation without replaying the whole pipeline.

use sha2::{Digest, Sha256};

/// Derive a named sub-seed from a root seed.
pub fn subseed(root: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}
