//! Stable 64-bit hashing (FNV-1a) used for feature hashing, vocabulary
//! fingerprints and seed derivation. `std`'s default hasher is not stable
//! across releases, so reproducible runs need their own function.

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

/// FNV-1a over `bytes`, folded together with `seed`.
pub fn fnv1a64(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET ^ seed.wrapping_mul(FNV_PRIME);
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Derive a child seed from a parent seed and a label, so that every stage
/// of a run draws from an independent, reproducible stream.
pub fn derive_seed(parent: u64, label: &str) -> u64 {
    fnv1a64(parent, label.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable() {
        // Frozen values: changing them silently would invalidate every
        // recorded run and checkpoint fingerprint.
        assert_eq!(fnv1a64(0, b""), FNV_OFFSET);
        assert_eq!(fnv1a64(0, b"a"), fnv1a64(0, b"a"));
        assert_ne!(fnv1a64(0, b"a"), fnv1a64(0, b"b"));
        assert_ne!(fnv1a64(0, b"a"), fnv1a64(1, b"a"));
    }

    #[test]
    fn derived_seeds_differ_by_label() {
        assert_ne!(derive_seed(7, "sft"), derive_seed(7, "grpo"));
    }
}
