//! Scalar abstraction shared by every field and solver.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point scalar the toolkit is generic over (`f32` or `f64`).
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Never fails for the supported types.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_idx(i: usize) -> Self {
        Self::from_usize(i).expect("index representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion to f64")
    }

    /// `tol`, widened to the rounding bound `n ε` of an `n`-term sum.
    #[inline]
    fn sum_slack(tol: f64, n: usize) -> Self {
        Self::lit(tol).max(Self::epsilon() * Self::from_idx(n.max(64)))
    }

    /// Iterative-solver tolerance floor for this precision.
    fn solver_floor() -> Self;
}

impl Real for f32 {
    fn solver_floor() -> Self {
        1e-6
    }
}

impl Real for f64 {
    fn solver_floor() -> Self {
        1e-14
    }
}
