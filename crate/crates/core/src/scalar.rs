//! Floating-point scalar abstraction so the whole pipeline runs in `f32` or `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Scalar type for all nodal fields, matrices and solver arithmetic.
///
/// Mesh geometry is kept in exact integers (see [`crate::mesh`]); everything
/// derived from it is generic over this trait. `f64` is the default used by
/// the type aliases at the crate root and by the CLI.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Sum + PartialOrd + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` constant. Panics only if the value is not
    /// representable, which cannot happen for `f32`/`f64`.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("constant not representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Tolerance for "sums to one / lies in [0,1]" admissibility checks.
    /// Roughly 4096 ulp at magnitude one (~9e-13 for `f64`).
    #[inline]
    fn admissibility_tol() -> Self {
        Self::epsilon() * Self::lit(4096.0)
    }

    /// Threshold below zero at which a trial nodal value counts as a bound
    /// violation (~1.4e-14 for `f64`). Chosen well inside the admissibility
    /// budget so that re-running the correction is a no-op.
    #[inline]
    fn violation_tol() -> Self {
        Self::epsilon() * Self::lit(64.0)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
