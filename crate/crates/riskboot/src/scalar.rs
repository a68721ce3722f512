//! Scalar abstraction the numeric core is generic over.

use num_traits::{Float, FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar: `f32` or `f64`.
///
/// Random draws are always generated in `f64` and converted with [`Real::of`],
/// so the `f64` instantiation is bit-exact with respect to the weight streams.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Send + Sync + 'static
{
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("scalar conversion from f64")
    }

    fn of_usize(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("scalar conversion from usize")
    }

    fn as_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("scalar conversion to f64")
    }

    /// Two scalars compared as a total order; inputs are validated finite at
    /// the data boundary, so `partial_cmp` cannot fail in practice.
    fn total_order(self, other: Self) -> std::cmp::Ordering {
        self.partial_cmp(&other)
            .expect("non-finite value in ordering")
    }
}

impl<T> Real for T where
    T: Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Send + Sync + 'static
{
}
