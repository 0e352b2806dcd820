//! Scalar abstraction shared by every numeric module.

use std::fmt::Debug;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Real scalar used throughout the crate: `f32` or `f64`.
pub trait Real: Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Default + Send + Sync + 'static {
    /// Lossy conversion from `f64`. Total for the implementors in this crate.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    #[inline]
    fn of_usize(x: usize) -> Self {
        Self::from_usize(x).expect("usize is representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Threshold under which a vector norm is treated as zero.
    fn norm_epsilon() -> Self;
}

impl Real for f32 {
    fn norm_epsilon() -> Self {
        1e-6
    }
}

impl Real for f64 {
    fn norm_epsilon() -> Self {
        1e-12
    }
}
