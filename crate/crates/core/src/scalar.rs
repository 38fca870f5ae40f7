//! Floating-point abstraction shared by the engine and the statistics code.

use std::fmt::{Debug, Display};

/// Float number trait, implemented for [f32] and [f64].
///
/// Model weights are stored as `f32` on disk; loading into an `f64` model
/// widens every value exactly.
pub trait Scalar:
    ndarray::NdFloat + num_traits::Float + num_traits::FromPrimitive + Debug + Display + Send + Sync
{
    /// Width of the on-disk representation used when this scalar is serialized.
    const DTYPE: &'static str;

    fn from_stored(v: f32) -> Self;
    fn to_stored(self) -> f32;

    fn from_f64_lossy(v: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(v).unwrap_or_else(Self::nan)
    }

    fn to_f64_lossless(self) -> f64;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";

    fn from_stored(v: f32) -> Self {
        v
    }

    fn to_stored(self) -> f32 {
        self
    }

    fn to_f64_lossless(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";

    fn from_stored(v: f32) -> Self {
        f64::from(v)
    }

    fn to_stored(self) -> f32 {
        self as f32
    }

    fn to_f64_lossless(self) -> f64 {
        self
    }
}
