/// Derives an independent seed from a base seed and a stream index
/// (SplitMix64 finalizer over the combination).
pub fn mix_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        ^ stream
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// [`mix_seed`] applied to each stream index in turn.
pub fn mix_seeds(base: u64, streams: &[u64]) -> u64 {
    streams.iter().fold(base, |acc, &s| mix_seed(acc, s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_differ() {
        let a: Vec<u64> = (0..100).map(|i| mix_seed(7, i)).collect();
        let mut b = a.clone();
        b.sort_unstable();
        b.dedup();
        assert_eq!(b.len(), 100);
        assert_ne!(mix_seed(0, 1), mix_seed(1, 0));
        assert_eq!(mix_seeds(3, &[1, 2]), mix_seed(mix_seed(3, 1), 2));
    }
}
