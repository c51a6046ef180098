use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar the numeric core is generic over: `f32` or `f64`.
///
/// Everything on disk is stored as `f64`, so the `f64` instantiation
/// round-trips bit-exactly and `f32` round-trips losslessly.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal into this scalar.
    fn of(x: f64) -> Self;

    /// Widens to `f64` for persistence and reporting.
    fn widen(self) -> f64;

    fn of_usize(n: usize) -> Self {
        Self::of(n as f64)
    }

    /// Adjacent representable value towards +∞ or −∞.
    fn step_ulp(self, up: bool) -> Self;
}

impl Scalar for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }

    #[inline]
    fn widen(self) -> f64 {
        self
    }

    fn step_ulp(self, up: bool) -> Self {
        if up {
            self.next_up()
        } else {
            self.next_down()
        }
    }
}

impl Scalar for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn widen(self) -> f64 {
        self as f64
    }

    fn step_ulp(self, up: bool) -> Self {
        if up {
            self.next_up()
        } else {
            self.next_down()
        }
    }
}
