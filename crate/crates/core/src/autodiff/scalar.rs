use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Arithmetic shared by plain `f64` evaluation and taped [`Var`](super::Var)
/// evaluation.
///
/// Every routine that is written against `Scalar` (dictionary evaluation,
/// velocity models, Runge-Kutta stages) produces bit-identical values for
/// both implementations, because the fused operations below fold their
/// terms in the same order.
pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    /// A value that carries no derivative information.
    fn constant(v: f64) -> Self;

    fn value(self) -> f64;

    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tanh(self) -> Self;
    /// Absolute value; the derivative at zero is taken as zero.
    fn abs(self) -> Self;
    fn powi(self, k: i32) -> Self;

    /// `Σ a[i] * b[i]`, accumulated left to right from zero.
    fn dot(a: &[Self], b: &[Self]) -> Self;

    /// `Σ w[i] * x[i]` with constant weights, accumulated left to right.
    fn dot_const(w: &[f64], x: &[Self]) -> Self;

    /// `base + h * Σ w[j] * k[j]`; zero weights are skipped.
    fn axpy_sum(base: Self, h: f64, w: &[f64], k: &[Self]) -> Self;

    fn zero() -> Self {
        Self::constant(0.0)
    }
}

pub(crate) fn fold_dot(a: impl Iterator<Item = f64>, b: impl Iterator<Item = f64>) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.zip(b) {
        acc += x * y;
    }
    acc
}

pub(crate) fn fold_axpy(
    base: f64,
    h: f64,
    w: &[f64],
    k: impl Iterator<Item = f64>,
) -> f64 {
    let mut acc = 0.0;
    for (&wj, kj) in w.iter().zip(k) {
        if wj != 0.0 {
            acc += wj * kj;
        }
    }
    base + h * acc
}

impl Scalar for f64 {
    #[inline]
    fn constant(v: f64) -> Self {
        v
    }

    #[inline]
    fn value(self) -> f64 {
        self
    }

    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }

    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }

    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }

    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }

    #[inline]
    fn powi(self, k: i32) -> Self {
        f64::powi(self, k)
    }

    fn dot(a: &[Self], b: &[Self]) -> Self {
        fold_dot(a.iter().copied(), b.iter().copied())
    }

    fn dot_const(w: &[f64], x: &[Self]) -> Self {
        fold_dot(w.iter().copied(), x.iter().copied())
    }

    fn axpy_sum(base: Self, h: f64, w: &[f64], k: &[Self]) -> Self {
        fold_axpy(base, h, w, k.iter().copied())
    }
}
