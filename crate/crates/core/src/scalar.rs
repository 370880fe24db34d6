//! Scalar abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point type the spectral, model and drift code is generic over.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`, used for literals and config values.
    fn lit(v: f64) -> Self;

    /// Conversion from a count.
    fn from_usize_lossy(n: usize) -> Self {
        Self::lit(n as f64)
    }

    fn to_f64_lossy(self) -> f64;

    // Transcendental functions computed in portable Rust rather than through
    // the platform math library, so results do not depend on optimization
    // level (which may fuse or constant-fold libm calls) or on the host libc.

    fn sin_cos_portable(self) -> (Self, Self);
    fn atan2_portable(self, x: Self) -> Self;
    fn hypot_portable(self, other: Self) -> Self;
    fn exp_portable(self) -> Self;
    fn ln_portable(self) -> Self;
    fn tanh_portable(self) -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
    #[inline]
    fn sin_cos_portable(self) -> (Self, Self) {
        libm::sincosf(self)
    }
    #[inline]
    fn atan2_portable(self, x: Self) -> Self {
        libm::atan2f(self, x)
    }
    #[inline]
    fn hypot_portable(self, other: Self) -> Self {
        libm::hypotf(self, other)
    }
    #[inline]
    fn exp_portable(self) -> Self {
        libm::expf(self)
    }
    #[inline]
    fn ln_portable(self) -> Self {
        libm::logf(self)
    }
    #[inline]
    fn tanh_portable(self) -> Self {
        libm::tanhf(self)
    }
}

impl Scalar for f64 {
    #[inline]
    fn lit(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self
    }
    #[inline]
    fn sin_cos_portable(self) -> (Self, Self) {
        libm::sincos(self)
    }
    #[inline]
    fn atan2_portable(self, x: Self) -> Self {
        libm::atan2(self, x)
    }
    #[inline]
    fn hypot_portable(self, other: Self) -> Self {
        libm::hypot(self, other)
    }
    #[inline]
    fn exp_portable(self) -> Self {
        libm::exp(self)
    }
    #[inline]
    fn ln_portable(self) -> Self {
        libm::log(self)
    }
    #[inline]
    fn tanh_portable(self) -> Self {
        libm::tanh(self)
    }
}
