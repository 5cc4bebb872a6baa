//! Seeded random streams.
//!
//! Each consumer of randomness (a forest tree, an MLP epoch shuffle, ...) gets
//! its own ChaCha stream selected by a component id, so results do not depend on
//! the order in which components are trained.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Component ids below this are reserved for per-tree streams.
pub const TREE_STREAMS: u64 = 1 << 32;
pub const MLP_INIT: u64 = TREE_STREAMS;
pub const MLP_SHUFFLE: u64 = TREE_STREAMS + 1 + (1 << 20);
pub const SVM_SHUFFLE: u64 = TREE_STREAMS + 1 + (2 << 20);
pub const SPLIT: u64 = TREE_STREAMS + 1 + (3 << 20);
pub const BARCODE: u64 = TREE_STREAMS + 1 + (4 << 20);

pub fn stream(seed: u64, component: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(component);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_independent_and_repeatable() {
        let a: Vec<u64> = (0..4).map(|_| stream(7, 3).random()).collect();
        let mut s = stream(7, 3);
        let b: Vec<u64> = (0..4).map(|_| s.random()).collect();
        let mut t = stream(7, 4);
        let c: Vec<u64> = (0..4).map(|_| t.random()).collect();
        assert_eq!(a[0], b[0]);
        assert_ne!(b, c);
    }
}
