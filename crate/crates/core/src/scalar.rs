//! Floating-point scalar abstraction for the numeric kernels.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point scalar: `f32` or `f64`.
///
/// Everything numeric that is not tied to a file format is written against
/// this trait so precision can be picked per use: `f64` for gradient checks
/// and reproducible training runs, `f32` where throughput matters.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from `f64`, used for constants and config values.
    fn of_f64(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite f64 converts to any scalar")
    }

    /// Lossy conversion from `usize`, used for batch-size denominators.
    fn of_usize(v: usize) -> Self {
        <Self as FromPrimitive>::from_usize(v).expect("usize converts to any scalar")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
