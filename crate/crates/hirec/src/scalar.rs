//! Floating-point abstraction for the numeric kernels.
//!
//! Belief updates, the neural substrate, the removal score, and the spectral
//! baselines are generic over [`Scalar`] so the same code runs at `f32` or
//! `f64`. The harness pins everything to [`crate::Real`].

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::Float;

/// Floating-point scalar usable by all numeric kernels.
pub trait Scalar:
    Float
    + LinalgScalar
    + ScalarOperand
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; panics only on values a float cannot hold.
    fn from_f64(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("f64 -> Scalar conversion")
    }

    /// Widening conversion to `f64`.
    fn into_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("Scalar -> f64 conversion")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Clamp to the unit interval. Probability kernels use this to absorb the
/// last-ulp rounding of sums that are mathematically in [0, 1].
pub fn clamp01<F: Scalar>(x: F) -> F {
    if x < F::zero() {
        F::zero()
    } else if x > F::one() {
        F::one()
    } else {
        x
    }
}
