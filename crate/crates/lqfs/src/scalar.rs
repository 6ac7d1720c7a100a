use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar the analysis kernels are generic over: f32 or f64.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::NumCast
    + num_traits::NumAssign
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Shorthand for lifting an f64 constant into the working scalar type.
#[inline]
pub(crate) fn fl<F: Real>(x: f64) -> F {
    F::from_f64(x).expect("f64 constant representable in scalar type")
}
