//! Scalar abstraction for the numeric core.
//!
//! Everything numeric in this crate (tensors, geometry, simulators, the
//! model) is generic over [`Scalar`], which is implemented for `f32` and
//! `f64`. File formats and the CLI always run at `f64`.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar usable throughout the numeric core.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal into the scalar type.
    ///
    /// Used for constants in generic code; the conversion from a finite
    /// `f64` cannot fail for the supported types.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 literal converts to scalar")
    }

    /// Lossy view as `f64` (exact for `f64` and for all `f32` values).
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    /// π in this scalar type.
    fn pi() -> Self {
        Self::lit(std::f64::consts::PI)
    }

    /// 2π in this scalar type.
    fn two_pi() -> Self {
        Self::lit(std::f64::consts::TAU)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
