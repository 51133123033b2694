//! Scalar abstraction shared by the belief math.
//!
//! The sensing, filtering and entropy code is written against [`Scalar`] so it
//! can run in `f32` (embedded / bulk rollouts) or `f64` (simulation, oracles).
//! The simulator itself is fixed to `f64`; see the aliases at the crate root.

use core::fmt::{Debug, Display};
use core::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar used by the belief math: `f32` or `f64`.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + Debug
    + Display
    + Default
    + Sum
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Gauss error function.
    fn erf(self) -> Self;

    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    #[inline]
    fn erf(self) -> Self {
        libm::erff(self)
    }
}

impl Scalar for f64 {
    #[inline]
    fn erf(self) -> Self {
        libm::erf(self)
    }
}

/// Standard normal CDF.
#[inline]
pub fn normal_cdf<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    half * (T::one() + (x / T::SQRT_2()).erf())
}

/// Standard normal density.
#[inline]
pub fn normal_pdf<T: Scalar>(x: T) -> T {
    let inv_sqrt_2pi = T::one() / (T::lit(2.0) * T::PI()).sqrt();
    inv_sqrt_2pi * (-(x * x) / T::lit(2.0)).exp()
}
