//! Scalar abstraction shared by the geometry, dynamics and simulation code.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};

/// Floating point scalar the simulator and metrics are generic over (`f32` or `f64`).
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Rounds to nearest for `f32`.
    fn lit(v: f64) -> Self;

    fn as_f64(self) -> f64;

    fn of_f32(v: f32) -> Self {
        Self::lit(v as f64)
    }

    fn as_f32(self) -> f32 {
        self.as_f64() as f32
    }

    fn of_usize(v: usize) -> Self {
        Self::lit(v as f64)
    }
}

impl Real for f32 {
    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn of_f32(v: f32) -> Self {
        v
    }
}

impl Real for f64 {
    #[inline]
    fn lit(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle<R: Real>(a: R) -> R {
    let two_pi = R::PI() + R::PI();
    let mut w = a % two_pi;
    if w > R::PI() {
        w -= two_pi;
    } else if w <= -R::PI() {
        w += two_pi;
    }
    w
}

pub fn clamp<R: Real>(v: R, lo: R, hi: R) -> R {
    if v < lo {
        lo
    } else if v > hi {
        hi
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn wrap_is_half_open() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(0.5f64 + 4.0 * PI) - 0.5).abs() < 1e-12);
        assert!((wrap_angle(-0.5f32) + 0.5).abs() < 1e-7);
    }
}
