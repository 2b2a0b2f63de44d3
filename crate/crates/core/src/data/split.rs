use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const DEFAULT_RATIOS: [f64; 3] = [0.7, 0.2, 0.1];

/// Seeded shuffle, then contiguous train / val / test runs. Train and val
/// take `floor(ratio * n)`; test takes the remainder.
pub fn split_dataset<S>(mut items: Vec<S>, ratios: [f64; 3], seed: u64) -> Result<(Vec<S>, Vec<S>, Vec<S>)> {
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 || ratios.iter().any(|r| !(*r >= 0.0)) {
        return Err(Error::Split(format!("ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let n = items.len();
    let take = |r: f64| libm::floor(r * n as f64 + 1e-9) as usize;
    let (n_train, n_val) = (take(ratios[0]), take(ratios[1]));
    let n_test = n - n_train - n_val;
    for (name, count, r) in [("train", n_train, ratios[0]), ("val", n_val, ratios[1]), ("test", n_test, ratios[2])] {
        if r > 0.0 && count == 0 {
            return Err(Error::Split(format!("{name} split is empty for {n} samples at ratio {r}")));
        }
    }
    items.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = items.split_off(n_train + n_val);
    let val = items.split_off(n_train);
    Ok((items, val, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        let (a, b, c) = split_dataset((0..100).collect(), DEFAULT_RATIOS, 1).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (70, 20, 10));
        let (a, b, c) = split_dataset((0..11_495).collect(), DEFAULT_RATIOS, 1).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (8046, 2299, 1150));
    }

    #[test]
    fn seeded_membership() {
        let x = split_dataset((0..50).collect::<Vec<_>>(), DEFAULT_RATIOS, 9).unwrap();
        let y = split_dataset((0..50).collect::<Vec<_>>(), DEFAULT_RATIOS, 9).unwrap();
        assert_eq!(x, y);
        let mut all: Vec<_> = x.0.iter().chain(&x.1).chain(&x.2).copied().collect();
        all.sort();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_bad_ratios() {
        assert!(split_dataset((0..10).collect::<Vec<_>>(), [0.5, 0.2, 0.2], 0).is_err());
        assert!(split_dataset((0..2).collect::<Vec<_>>(), DEFAULT_RATIOS, 0).is_err());
        assert!(split_dataset((0..2).collect::<Vec<_>>(), [1.0, 0.0, 0.0], 0).is_ok());
    }
}
