//! Scalar abstraction for the numeric core.
//!
//! All model, latency, and mechanism math is written against [`Scalar`] so
//! the same code runs at `f32` or `f64`. The simulator and CLI pin `f64`
//! (see the type aliases at the crate root); `f32` remains useful for
//! quick what-if sweeps where memory or SIMD width matters.

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar used throughout the crate: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + core::iter::Sum
    + core::fmt::Debug
    + core::fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Exact conversion from a small integer count (user/task tallies).
    fn from_count(n: u32) -> Self {
        Self::from_u32(n).expect("count representable in scalar")
    }

    /// Conversion from `f64`, rounding when `Self` is narrower.
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 representable in scalar")
    }

    /// Widening conversion to `f64` for output formatting.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("scalar representable in f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
