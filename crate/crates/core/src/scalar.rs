//! Scalar abstraction shared by every numeric module.
//!
//! All tensors, losses and models are generic over [`Scalar`]. The crate
//! root re-exports `f64` aliases, which is what training uses; `f32` is
//! supported for inference and experimentation but the finite-difference
//! checks are only meaningful in double precision.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point element type: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lower clamp applied before every logarithm.
    const LOG_FLOOR: f64 = 1e-12;

    /// Converts an `f64` literal into this type.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    /// Converts a count into this type.
    fn count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }

    fn log_floor() -> Self {
        Self::lit(Self::LOG_FLOOR)
    }

    /// `ln(max(self, LOG_FLOOR))`.
    fn clamped_ln(self) -> Self {
        self.max(Self::log_floor()).ln()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
