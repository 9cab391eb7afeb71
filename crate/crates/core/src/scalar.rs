//! Floating-point scalar abstraction: all core math is generic over `f32`
//! or `f64`.

use ndarray::NdFloat;
use num_traits::FromPrimitive;
use serde::{de::DeserializeOwned, Serialize};
use std::iter::Sum;

/// Scalar type for coordinates, times, accessibility values and network
/// weights.
pub trait Scalar:
    NdFloat + FromPrimitive + Sum<Self> + Default + Serialize + DeserializeOwned
{
    /// Cast from an `f64` literal or intermediate.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 value representable in scalar type")
    }

    /// Widen to `f64` (exact for `f32`/`f64`).
    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("scalar convertible to f64")
    }
}

impl<T> Scalar for T where
    T: NdFloat + FromPrimitive + Sum<T> + Default + Serialize + DeserializeOwned
{
}
