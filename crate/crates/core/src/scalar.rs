//! Scalar abstractions.
//!
//! [`Scalar`] is the storage type (`f32` or `f64`). [`Real`] is the
//! arithmetic every differentiable routine in the crate is written against:
//! it is implemented by plain scalars and by tape variables, so one routine
//! serves both the gradient-free forward pass and the recorded one, and the
//! two produce bit-identical values.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{Add, Div, Mul, Neg, Sub};

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating point storage type.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal. Panics only if the target type cannot hold it,
    /// which does not happen for `f32`/`f64`.
    #[inline]
    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Differentiable real arithmetic.
///
/// Binary operators with a plain scalar on the right are part of the bound;
/// use [`Real::rsub`] and [`Real::rdiv`] for a scalar on the left.
pub trait Real<T: Scalar>:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<T, Output = Self>
    + Sub<T, Output = Self>
    + Mul<T, Output = Self>
    + Div<T, Output = Self>
{
    fn value(&self) -> T;

    /// A constant living in the same context as `self`.
    fn lift(&self, c: T) -> Self;

    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tanh(self) -> Self;
    fn powf(self, e: T) -> Self;
    /// Rectifier with subgradient 0 at 0.
    fn relu(self) -> Self;
    /// Ties select `self`.
    fn max(self, other: Self) -> Self;

    /// Sum of a non-empty slice, accumulated left to right.
    fn sum(xs: &[Self]) -> Self;
    /// Inner product of equal-length non-empty slices, accumulated left to right.
    fn dot(a: &[Self], b: &[Self]) -> Self;

    /// `c - self`
    #[inline]
    fn rsub(self, c: T) -> Self {
        -self + c
    }

    /// `c / self`
    #[inline]
    fn rdiv(self, c: T) -> Self {
        self.lift(c) / self
    }

    #[inline]
    fn sqrt(self) -> Self {
        self.powf(T::c(0.5))
    }

    #[inline]
    fn square(self) -> Self {
        self * self
    }

    /// Logistic function, evaluated through `tanh` so it stays finite for
    /// large arguments of either sign.
    #[inline]
    fn sigmoid(self) -> Self {
        ((self * T::c(0.5)).tanh() + T::one()) * T::c(0.5)
    }

    #[inline]
    fn max_c(self, c: T) -> Self {
        self.max(self.lift(c))
    }
}

/// Elementary functions as evaluated by every [`Real`] implementation and the
/// tape replay. Arguments are hidden from the optimizer so that inlined calls
/// cannot be rewritten on one path only (`pow(x, 0.5)` into `sqrt`, `sin`/`cos`
/// pairs into `sincos`), which would break bit-identical replays.
pub(crate) mod kernel {
    use std::hint::black_box;

    use num_traits::Float;

    use super::Scalar;

    #[inline]
    pub fn pow<T: Scalar>(x: T, e: T) -> T {
        let (x, e) = (black_box(x), black_box(e));
        if e == T::c(0.5) {
            Float::sqrt(x)
        } else {
            Float::powf(x, e)
        }
    }

    #[inline]
    pub fn exp<T: Scalar>(x: T) -> T {
        Float::exp(black_box(x))
    }

    #[inline]
    pub fn ln<T: Scalar>(x: T) -> T {
        Float::ln(black_box(x))
    }

    #[inline]
    pub fn sin<T: Scalar>(x: T) -> T {
        Float::sin(black_box(x))
    }

    #[inline]
    pub fn cos<T: Scalar>(x: T) -> T {
        Float::cos(black_box(x))
    }

    #[inline]
    pub fn tanh<T: Scalar>(x: T) -> T {
        Float::tanh(black_box(x))
    }
}

/// Left-to-right sum used by every [`Real`] implementation.
#[inline]
pub(crate) fn sum_values<T: Scalar>(xs: impl IntoIterator<Item = T>) -> T {
    let mut it = xs.into_iter();
    let first = it.next().expect("sum of empty slice");
    it.fold(first, |acc, x| acc + x)
}

/// Left-to-right inner product used by every [`Real`] implementation.
#[inline]
pub(crate) fn dot_values<T: Scalar>(pairs: impl IntoIterator<Item = (T, T)>) -> T {
    let mut it = pairs.into_iter();
    let (a0, b0) = it.next().expect("dot of empty slices");
    it.fold(a0 * b0, |acc, (a, b)| acc + a * b)
}

impl<T: Scalar> Real<T> for T {
    #[inline]
    fn value(&self) -> T {
        *self
    }
    #[inline]
    fn lift(&self, c: T) -> Self {
        c
    }
    #[inline]
    fn exp(self) -> Self {
        kernel::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        kernel::ln(self)
    }
    #[inline]
    fn sin(self) -> Self {
        kernel::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        kernel::cos(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        kernel::tanh(self)
    }
    #[inline]
    fn powf(self, e: T) -> Self {
        kernel::pow(self, e)
    }
    #[inline]
    fn relu(self) -> Self {
        if self > T::zero() {
            self
        } else {
            T::zero()
        }
    }
    #[inline]
    fn max(self, other: Self) -> Self {
        if self >= other {
            self
        } else {
            other
        }
    }
    #[inline]
    fn sum(xs: &[Self]) -> Self {
        sum_values(xs.iter().copied())
    }
    #[inline]
    fn dot(a: &[Self], b: &[Self]) -> Self {
        assert_eq!(a.len(), b.len(), "dot length mismatch");
        dot_values(a.iter().copied().zip(b.iter().copied()))
    }
    #[inline]
    fn rsub(self, c: T) -> Self {
        c - self
    }
    #[inline]
    fn rdiv(self, c: T) -> Self {
        c / self
    }
}

/// Numerically stable softmax over a non-empty slice.
pub fn softmax<T: Scalar, R: Real<T>>(logits: &[R]) -> Vec<R> {
    let shift = logits
        .iter()
        .map(Real::value)
        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    let exps: Vec<R> = logits.iter().map(|&l| (l - shift).exp()).collect();
    let total = R::sum(&exps);
    exps.into_iter().map(|e| e / total).collect()
}

/// `log(sum(exp(xs)))`, shifted by the maximum for stability.
pub fn logsumexp<T: Scalar, R: Real<T>>(xs: &[R]) -> R {
    let shift = xs
        .iter()
        .map(Real::value)
        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    let exps: Vec<R> = xs.iter().map(|&x| (x - shift).exp()).collect();
    R::sum(&exps).ln() + shift
}
