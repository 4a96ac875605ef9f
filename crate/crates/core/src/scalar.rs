//! Scalar abstraction shared by every numerical module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use rustfft::FftNum;

/// Floating point scalar usable throughout the crate: `f32` or `f64`.
///
/// Tolerances scale with the precision of the type; the `f64` values are the
/// contract values, the `f32` ones are loosened proportionally to machine epsilon.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + FftNum + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Distance from the target beyond which a point is rejected as off-manifold.
    fn manifold_tol() -> Self;
    /// Tolerance for invariants stated "to rounding" on states (tangency, on-manifold).
    fn state_tol() -> Self;

    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

impl Real for f64 {
    fn manifold_tol() -> Self {
        1e-8
    }
    fn state_tol() -> Self {
        1e-10
    }
}

impl Real for f32 {
    fn manifold_tol() -> Self {
        1e-4
    }
    fn state_tol() -> Self {
        1e-5
    }
}

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub(crate) fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}
