//! Scalar abstraction for the numeric pipeline.
//!
//! Everything in this crate that touches pixel data is generic over a
//! floating-point scalar so the same code runs in `f32` (training,
//! inference) and `f64` (solvers, metrics, gradient checks).

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssignOps + Sum + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64`; constants in this crate are written as
    /// `f64` literals and narrowed at the use site.
    fn from_f64_c(v: f64) -> Self;

    /// Widening (or identity) conversion to `f64`.
    fn to_f64_c(self) -> f64;

    /// Conversion to `f32`, used by the checkpoint and PFM writers.
    fn to_f32_c(self) -> f32;

    fn from_f32_c(v: f32) -> Self;

    fn from_usize_c(v: usize) -> Self {
        Self::from_f64_c(v as f64)
    }
}

impl Scalar for f32 {
    #[inline]
    fn from_f64_c(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64_c(self) -> f64 {
        self as f64
    }
    #[inline]
    fn to_f32_c(self) -> f32 {
        self
    }
    #[inline]
    fn from_f32_c(v: f32) -> Self {
        v
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64_c(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64_c(self) -> f64 {
        self
    }
    #[inline]
    fn to_f32_c(self) -> f32 {
        self as f32
    }
    #[inline]
    fn from_f32_c(v: f32) -> Self {
        v as f64
    }
}
