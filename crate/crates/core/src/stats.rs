//! Order-independent reductions used for aggregating per-sequence outcomes.

use crate::scalar::Real;

/// Pairwise (cascade) summation; error grows as O(log n) instead of O(n).
pub fn pairwise_sum<T: Real>(xs: &[T]) -> T {
    const LEAF: usize = 16;
    if xs.len() <= LEAF {
        return xs.iter().fold(T::zero(), |acc, &x| acc + x);
    }
    let (lo, hi) = xs.split_at(xs.len() / 2);
    pairwise_sum(lo) + pairwise_sum(hi)
}

pub fn mean<T: Real>(xs: &[T]) -> T {
    if xs.is_empty() {
        return T::zero();
    }
    pairwise_sum(xs) / T::from_usize_lossy(xs.len())
}

/// Unbiased sample variance (n − 1 denominator); zero for fewer than two samples.
pub fn sample_variance<T: Real>(xs: &[T]) -> T {
    if xs.len() < 2 {
        return T::zero();
    }
    let m = mean(xs);
    let sq: Vec<T> = xs.iter().map(|&x| (x - m) * (x - m)).collect();
    pairwise_sum(&sq) / T::from_usize_lossy(xs.len() - 1)
}

/// Population variance (n denominator).
pub fn population_variance<T: Real>(xs: &[T]) -> T {
    if xs.is_empty() {
        return T::zero();
    }
    let m = mean(xs);
    let sq: Vec<T> = xs.iter().map(|&x| (x - m) * (x - m)).collect();
    pairwise_sum(&sq) / T::from_usize_lossy(xs.len())
}

pub fn sample_std<T: Real>(xs: &[T]) -> T {
    sample_variance(xs).sqrt()
}
