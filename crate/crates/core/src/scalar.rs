//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Real floating-point scalar. Implemented for `f32` and `f64`.
///
/// All algorithms are written against this trait; the experiment tooling
/// instantiates them at `f64` because the exponential regimes of the
/// softmax (`e^{-beta * gap}`) underflow single precision very quickly.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + LowerExp
    + Default
    + Send
    + Sync
    + 'static
{
    /// Gauss error function.
    fn erf(self) -> Self;

    /// Converts an `f64` literal, rounding to the nearest representable value.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    /// Converts a count.
    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Shortest round-trip text, in exponent form outside `[1e-4, 1e16)`.
    fn to_text(self) -> String {
        let a = self.abs();
        if a == Self::zero() || !a.is_finite() || (a >= Self::of(1e-4) && a < Self::of(1e16)) {
            format!("{self}")
        } else {
            format!("{self:e}")
        }
    }
}

impl Scalar for f32 {
    #[inline]
    fn erf(self) -> f32 {
        libm::erff(self)
    }
}

impl Scalar for f64 {
    #[inline]
    fn erf(self) -> f64 {
        libm::erf(self)
    }
}
