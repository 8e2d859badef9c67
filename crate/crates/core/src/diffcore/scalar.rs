//! The scalar abstraction shared by plain `f64` evaluation and taped
//! evaluation.
//!
//! Code written against [`Scalar`] runs unchanged on `f64` (fast primal
//! evaluation) and on [`Var`](super::Var) (recorded for reverse-mode
//! differentiation). Both implementations compute primal values through the
//! same `f64` routines in this module, so a recorded evaluation reproduces the
//! direct one bitwise.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    /// Lifts a constant. Constants carry no derivative.
    fn cst(v: f64) -> Self;
    /// Primal value.
    fn val(self) -> f64;

    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn abs(self) -> Self;
    /// Four-quadrant arctangent of `self / x`.
    fn atan2(self, x: Self) -> Self;
    fn logistic(self) -> Self;
    fn softplus(self) -> Self;
    fn leaky_relu(self, slope: f64) -> Self;
    /// Larger of the two; the derivative follows the selected operand.
    fn max(self, other: Self) -> Self;

    fn square(self) -> Self {
        self * self
    }

    /// `max(self, lo)` smoothed over a band of size `width` with a softplus:
    /// `lo + width * softplus((self - lo) / width)`.
    fn clamp_min_smooth(self, lo: f64, width: f64) -> Self {
        ((self - lo) / width).softplus() * width + lo
    }
}

pub(crate) fn logistic_f64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus_f64(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn leaky_f64(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x * slope
    }
}

impl Scalar for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn val(self) -> f64 {
        self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline]
    fn atan2(self, x: Self) -> Self {
        f64::atan2(self, x)
    }
    #[inline]
    fn logistic(self) -> Self {
        logistic_f64(self)
    }
    #[inline]
    fn softplus(self) -> Self {
        softplus_f64(self)
    }
    #[inline]
    fn leaky_relu(self, slope: f64) -> Self {
        leaky_f64(self, slope)
    }
    #[inline]
    fn max(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }
}
