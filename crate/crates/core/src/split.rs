//! Seeded random partition of a sample set.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};

/// Splits `items` into parts of the given fractions after a seeded shuffle.
/// Part boundaries are the rounded cumulative fractions, so the parts are
/// disjoint and together hold every item.
pub fn split_dataset<T: Clone>(items: &[T], fractions: &[f64], seed: u64) -> Result<Vec<Vec<T>>> {
    let total: f64 = fractions.iter().sum();
    if fractions.is_empty() || fractions.iter().any(|f| !(*f >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(CoreError::InvalidConfig(format!("split fractions {fractions:?} must be non-negative and sum to 1")));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = items.len() as f64;
    let mut parts = Vec::with_capacity(fractions.len());
    let (mut cumulative, mut start) = (0.0, 0usize);
    for (k, f) in fractions.iter().enumerate() {
        cumulative += f;
        let end = if k + 1 == fractions.len() {
            items.len()
        } else {
            ((cumulative * n).round() as usize).min(items.len())
        };
        if end <= start {
            return Err(CoreError::InvalidConfig(format!("split part {k} would be empty")));
        }
        parts.push(order[start..end].iter().map(|&i| items[i].clone()).collect());
        start = end;
    }
    Ok(parts)
}
