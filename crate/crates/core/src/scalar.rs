//! The scalar abstraction shared by plain floats and forward-mode jets.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use num_traits::{Float, One, Zero};

/// A real scalar that supports the operations appearing in coefficient
/// formulas.
///
/// Implemented for `f32`, `f64` and every [`Dual`](crate::jets::Dual) nesting
/// over them, so one evaluation path yields values and derivatives alike.
pub trait Scalar:
    Copy
    + Debug
    + PartialEq
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Send
    + Sync
    + 'static
{
    fn from_f64(value: f64) -> Self;

    /// The underlying real value, with every infinitesimal part dropped.
    fn re(&self) -> f64;

    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn powi(self, n: i32) -> Self;

    /// `value + t * direction`, with `t` seeded at every nesting level.
    ///
    /// Evaluating a function on such points and reading
    /// [`chain_coeff`](Scalar::chain_coeff) gives its derivatives along the
    /// line.
    fn line(value: f64, direction: f64) -> Self;

    /// Coefficient of the product of the `order` outermost infinitesimals.
    ///
    /// For a value produced from [`line`](Scalar::line) inputs this is the
    /// `order`-th derivative along the line.
    fn chain_coeff(&self, order: usize) -> f64;

    /// Nesting depth (0 for plain floats).
    fn depth() -> usize;
}

macro_rules! impl_float_scalar {
    ($($t:ty),*) => {$(
        impl Scalar for $t {
            #[inline]
            fn from_f64(value: f64) -> Self {
                value as $t
            }
            #[inline]
            fn re(&self) -> f64 {
                *self as f64
            }
            #[inline]
            fn sqrt(self) -> Self {
                Float::sqrt(self)
            }
            #[inline]
            fn sin(self) -> Self {
                Float::sin(self)
            }
            #[inline]
            fn cos(self) -> Self {
                Float::cos(self)
            }
            #[inline]
            fn powi(self, n: i32) -> Self {
                Float::powi(self, n)
            }
            #[inline]
            fn line(value: f64, _direction: f64) -> Self {
                value as $t
            }
            #[inline]
            fn chain_coeff(&self, order: usize) -> f64 {
                if order == 0 {
                    *self as f64
                } else {
                    0.0
                }
            }
            #[inline]
            fn depth() -> usize {
                0
            }
        }
    )*};
}

impl_float_scalar!(f32, f64);

/// Lifts a slice of reals into any scalar type.
pub fn lift_slice<T: Scalar>(values: &[f64]) -> Vec<T> {
    values.iter().map(|&v| T::from_f64(v)).collect()
}

/// Real parts of a slice of scalars.
pub fn re_slice<T: Scalar>(values: &[T]) -> Vec<f64> {
    values.iter().map(Scalar::re).collect()
}
