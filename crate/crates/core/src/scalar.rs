//! Scalar abstraction over the grid element type.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating-point scalar used for all grid math: `f32` in the shipping
/// pipeline, `f64` for oracles and high-precision gradient checks.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Lossy cast from `f64` into the working scalar.
#[inline]
pub fn cast<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("f64 -> scalar cast")
}

/// Cast the working scalar up to `f64`.
#[inline]
pub fn up<T: Scalar>(v: T) -> f64 {
    v.to_f64().expect("scalar -> f64 cast")
}
