//! Scalar abstraction: the numeric core is generic over `f32`/`f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar the crate's math is generic over.
///
/// Randomness is always drawn as `f64` and converted through
/// [`Scalar::from_f64_lossy`], so `f32` and `f64` instantiations consume
/// identical random streams.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 value converts to scalar")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand `f64 -> S` conversion used throughout the numeric code.
#[inline]
pub fn sc<S: Scalar>(v: f64) -> S {
    S::from_f64_lossy(v)
}
