//! Deterministic question subsets.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Picks `n` items by a seeded shuffle and returns them in their original
/// order. `n` larger than the input returns everything.
pub fn sample_subset<T: Clone>(items: &[T], n: usize, seed: u64) -> Vec<T> {
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(n);
    idx.sort_unstable();
    idx.into_iter().map(|i| items[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repeatable_and_sized() {
        let items: Vec<u32> = (0..1000).collect();
        let a = sample_subset(&items, 200, 42);
        assert_eq!(a, sample_subset(&items, 200, 42));
        assert_eq!(a.len(), 200);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_ne!(a, sample_subset(&items, 200, 43));
        assert_eq!(sample_subset(&items[..5], 10, 1).len(), 5);
    }
}
