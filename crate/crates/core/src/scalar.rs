use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar the numeric core is generic over. Implemented for `f32` and `f64`,
/// and for the double-double `twofloat::TwoFloat` with the `twofloat` feature.
///
/// Everything that touches disk or crosses into the baselines goes through
/// `f64`, so `lit`/`as_f64` are the only conversions the crate needs.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal. Lossy for `f32`.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }

    /// Logistic function `1 / (1 + e^-x)`.
    #[inline]
    fn sigmoid(self) -> Self {
        if self >= Self::zero() {
            Self::one() / (Self::one() + (-self).exp())
        } else {
            let e = self.exp();
            e / (Self::one() + e)
        }
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
#[cfg(feature = "twofloat")]
impl Scalar for twofloat::TwoFloat {
    // its `FromPrimitive::from_f64` drops the fractional part
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from(v)
    }
}
