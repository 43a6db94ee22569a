//! Scalar abstraction shared by every numerical module.

use std::fmt;

use nalgebra::RealField;
use num_traits::{FloatConst, FromPrimitive, ToPrimitive};

/// Real floating-point scalar (`f32` or `f64`) usable by the whole toolkit.
///
/// Analytic routines, fits and the density-matrix simulator are written
/// against this trait; the crate root exports `f64` aliases for the common
/// case.
pub trait Real:
    RealField
    + Copy
    + Default
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + fmt::Display
    + fmt::LowerExp
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Every `f64` is representable (possibly rounded).
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }

    /// Machine epsilon of the scalar type.
    fn eps() -> Self;
}

impl Real for f32 {
    fn eps() -> Self {
        f32::EPSILON
    }
}

impl Real for f64 {
    fn eps() -> Self {
        f64::EPSILON
    }
}

/// Degrees to radians.
#[inline]
pub fn deg_to_rad<T: Real>(deg: T) -> T {
    deg * T::PI() / T::lit(180.0)
}

/// Radians to degrees.
#[inline]
pub fn rad_to_deg<T: Real>(rad: T) -> T {
    rad * T::lit(180.0) / T::PI()
}
