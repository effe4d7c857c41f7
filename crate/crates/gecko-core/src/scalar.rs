//! Floating-point scalar abstraction: the whole crate is generic over f32/f64.

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Scalar type for tensors, models, and losses: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssignOps + Default + std::fmt::Debug + Send + Sync + 'static
{
    /// Lossless-enough conversion from `f64` for constants and RNG draws.
    fn from_f64_c(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to any Scalar")
    }

    /// Widen to `f64` for reporting and accumulation.
    fn to_f64_c(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
