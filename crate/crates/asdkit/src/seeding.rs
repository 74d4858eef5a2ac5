//! Stable seed derivation so every randomized stage of the pipeline is a
//! pure function of the master seed and its position in the experiment.

/// FNV-1a over the master seed and a list of tags. Stable across platforms
/// and releases, unlike `DefaultHasher`.
pub fn derive_seed(master: u64, tags: &[&str]) -> u64 {
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;
    let mut hash = OFFSET;
    for byte in master.to_le_bytes() {
        hash ^= byte as u64;
        hash = hash.wrapping_mul(PRIME);
    }
    for tag in tags {
        for byte in tag.as_bytes() {
            hash ^= *byte as u64;
            hash = hash.wrapping_mul(PRIME);
        }
        // Separator guards against tag-concatenation collisions.
        hash ^= 0xff;
        hash = hash.wrapping_mul(PRIME);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_tags_give_distinct_seeds() {
        let a = derive_seed(1, &["ab", "c"]);
        let b = derive_seed(1, &["a", "bc"]);
        assert_ne!(a, b);
        assert_ne!(derive_seed(1, &["x"]), derive_seed(2, &["x"]));
    }

    #[test]
    fn value_is_frozen() {
        // Seeds feed dataset generation; changing the hash silently would
        // invalidate every recorded experiment.
        assert_eq!(derive_seed(0, &[]), 12161962213042174405);
    }
}
