//! Stable seed derivation.
//!
//! Every random draw in the toolkit comes from a ChaCha stream whose seed is
//! derived by hashing a master seed with a list of labels, so results do not
//! depend on iteration order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Hash `master` together with `parts` into a new 64-bit seed.
///
/// Parts are length-prefixed, so `["ab", "c"]` and `["a", "bc"]` differ.
pub fn derive_seed(master: u64, parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(master: u64, parts: &[&[u8]]) -> Rng {
    rng(derive_seed(master, parts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn derivation_is_stable_and_label_sensitive() {
        let a = derive_seed(7, &[b"rondo", &3u64.to_le_bytes()]);
        assert_eq!(a, derive_seed(7, &[b"rondo", &3u64.to_le_bytes()]));
        assert_ne!(a, derive_seed(8, &[b"rondo", &3u64.to_le_bytes()]));
        assert_ne!(derive_seed(0, &[b"ab", b"c"]), derive_seed(0, &[b"a", b"bc"]));
    }

    #[test]
    fn rng_streams_repeat() {
        let mut r1 = rng(42);
        let mut r2 = rng(42);
        let a: Vec<u32> = (0..8).map(|_| r1.random()).collect();
        let b: Vec<u32> = (0..8).map(|_| r2.random()).collect();
        assert_eq!(a, b);
    }
}
