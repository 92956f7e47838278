//! Deterministic seed derivation.
//!
//! Every random draw in the simulator flows from an explicit seed through
//! this function, so trials are reproducible regardless of thread count or
//! evaluation order.

/// Derives an independent child seed from a base seed and a salt
/// (splitmix64 over their combination).
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_salts_give_distinct_seeds() {
        let s: Vec<u64> = (0..1000).map(|i| derive_seed(42, i)).collect();
        let mut sorted = s.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), s.len());
    }

    #[test]
    fn deterministic() {
        assert_eq!(derive_seed(7, 9), derive_seed(7, 9));
        assert_ne!(derive_seed(7, 9), derive_seed(8, 9));
    }
}
