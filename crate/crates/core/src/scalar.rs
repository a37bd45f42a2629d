//! Scalar abstraction shared by every numerical module.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real floating-point scalar the solver core is generic over.
///
/// Implemented for `f32` and `f64`. Linear algebra goes through `nalgebra`,
/// conversions from literals and back to `f64` (for reporting) go through
/// `num-traits`.
pub trait Scalar: RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + std::fmt::Debug + 'static {
    /// Converts an `f64` literal; panics only for values the type cannot represent at all.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal not representable in scalar type")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("integer not representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Machine epsilon of the concrete type.
    #[inline]
    fn eps() -> Self {
        Self::default_epsilon()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Tolerance scaled to the precision of `T`: `tol64` for `f64`, proportionally looser for `f32`.
pub(crate) fn scaled_tol<T: Scalar>(tol64: f64) -> T {
    let ratio = T::eps().as_f64() / f64::EPSILON;
    T::lit(tol64 * ratio.max(1.0))
}
