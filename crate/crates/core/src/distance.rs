//! Squared Euclidean distance, the one metric every index and the oracle share.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const LANES: usize = 8;

/// Squared Euclidean distance accumulated in `f64`.
///
/// Eight independent partial sums are folded pairwise at the end; the
/// summation order is fixed, so results are reproducible bit-for-bit.
///
/// Panics if the lengths differ; use [`distance_sq`] at API boundaries.
#[inline]
pub fn l2_sq<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    assert_eq!(a.len(), b.len(), "l2_sq: dimension mismatch");
    let mut acc = [0.0f64; LANES];
    let chunks_a = a.chunks_exact(LANES);
    let chunks_b = b.chunks_exact(LANES);
    let tail_a = chunks_a.remainder();
    let tail_b = chunks_b.remainder();
    for (ca, cb) in chunks_a.zip(chunks_b) {
        for l in 0..LANES {
            let d = ca[l].as_f64() - cb[l].as_f64();
            acc[l] += d * d;
        }
    }
    for (l, (x, y)) in tail_a.iter().zip(tail_b).enumerate() {
        let d = x.as_f64() - y.as_f64();
        acc[l] += d * d;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))
}

/// Checked squared Euclidean distance.
pub fn distance_sq<T: Scalar>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(l2_sq(a, b))
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.as_f64() * y.as_f64()).sum()
}
