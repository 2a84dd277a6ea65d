//! Scalar abstraction for the numeric core.
//!
//! Everything numeric (tensors, clustering, segmentation distances, metrics)
//! is generic over [`Scalar`] so the same code runs at `f32` for the pipeline
//! and at `f64` for the finite-difference and brute-force oracles in tests.
//! Reductions always accumulate in `f64` regardless of the scalar type.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, NumAssignOps, NumCast};

pub trait Scalar:
    Float + NumAssignOps + NumCast + Sum<Self> + Debug + Display + Default + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self {
        <Self as NumCast>::from(v).expect("f64 -> scalar cast")
    }

    /// Widening cast; named to avoid clashing with `ToPrimitive::to_f64`.
    fn as_f64(self) -> f64 {
        <f64 as NumCast>::from(self).expect("scalar -> f64 cast")
    }

    fn from_usize(v: usize) -> Self {
        Self::from_f64(v as f64)
    }

    fn half() -> Self {
        Self::from_f64(0.5)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Sum of `f64`-widened values; used wherever the oracle comparisons must
/// stay tight (dots, losses, means).
pub fn sum_f64<S: Scalar>(values: &[S]) -> f64 {
    values.iter().map(|v| v.as_f64()).sum()
}

/// Squared Euclidean distance between two equal-length vectors, accumulated
/// in `f64`.
pub fn sq_dist<S: Scalar>(a: &[S], b: &[S]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum()
}

/// Euclidean distance, see [`sq_dist`].
pub fn dist<S: Scalar>(a: &[S], b: &[S]) -> f64 {
    sq_dist(a, b).sqrt()
}
