//! Scalar abstraction for vector components.

use std::fmt::{Debug, Display};

use num_traits::Float;

/// Component type of stored vectors.
///
/// Distances are always accumulated in `f64` regardless of the storage type,
/// so `as_f64`/`from_f64` are the only conversions on hot paths.
pub trait Scalar:
    Float + Default + Debug + Display + Send + Sync + 'static
{
    fn as_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
    fn as_f32(self) -> f32;
    fn from_f32(v: f32) -> Self;
}

impl Scalar for f32 {
    #[inline(always)]
    fn as_f64(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline(always)]
    fn as_f32(self) -> f32 {
        self
    }
    #[inline(always)]
    fn from_f32(v: f32) -> Self {
        v
    }
}

impl Scalar for f64 {
    #[inline(always)]
    fn as_f64(self) -> f64 {
        self
    }
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn as_f32(self) -> f32 {
        self as f32
    }
    #[inline(always)]
    fn from_f32(v: f32) -> Self {
        v as f64
    }
}
