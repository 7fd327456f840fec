//! Scalar abstraction for the numeric kernels.

use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar: `f32` or `f64`.
///
/// Everything numeric (matrices, solvers, network layers) is written against
/// this trait; the pipeline instantiates `f64`.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + num_traits::NumAssign
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion from `f64` literals and counts.
    fn from_f64_lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 -> Real conversion")
    }

    fn from_usize_lit(v: usize) -> Self {
        Self::from_usize(v).expect("usize -> Real conversion")
    }

    fn to_f64_lit(self) -> f64 {
        self.to_f64().expect("Real -> f64 conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}
