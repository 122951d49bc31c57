use core::fmt::Debug;
use core::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar arithmetic shared by plain floats, forward jets and tape variables.
///
/// The primitive set is closed: `+ − × ÷`, `exp`, `ln`, `tanh`, `sigmoid`,
/// `softplus`, `sin`, `cos` and integer powers. Everything a Lagrangian or a
/// network computes must be expressed through these.
pub trait Real:
    Clone
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
    /// A constant, carrying no derivative information.
    fn from_f64(x: f64) -> Self;

    /// The primal value.
    fn value(&self) -> f64;

    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn tanh(&self) -> Self;
    fn sigmoid(&self) -> Self;
    fn softplus(&self) -> Self;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn powi(&self, n: i32) -> Self;

    fn square(&self) -> Self {
        self.clone() * self.clone()
    }

    /// `Σ a_k b_k`, summed left to right.
    fn dot(a: &[Self], b: &[Self]) -> Self {
        debug_assert_eq!(a.len(), b.len());
        let mut acc = Self::from_f64(0.0);
        for (x, y) in a.iter().zip(b) {
            acc = acc + x.clone() * y.clone();
        }
        acc
    }
}

/// Linear combination of `Self` values with weights of type `P`.
///
/// Lets a network layer keep its weights in the base scalar while the
/// activations carry input derivatives on top of it.
pub trait Affine<P>: Sized {
    /// `Σ w_k x_k + b`.
    fn affine(weights: &[P], inputs: &[Self], bias: &P) -> Self;
}

impl<S: Real> Affine<S> for S {
    fn affine(weights: &[S], inputs: &[S], bias: &S) -> S {
        S::dot(weights, inputs) + bias.clone()
    }
}

pub(crate) fn softplus_f64(x: f64) -> f64 {
    // max(x, 0) + ln(1 + e^{-|x|}) stays finite for large |x|.
    let m = if x > 0.0 { x } else { 0.0 };
    m + libm::log1p(libm::exp(-libm::fabs(x)))
}

pub(crate) fn sigmoid_f64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub(crate) fn powi_f64(x: f64, n: i32) -> f64 {
    let mut base = if n < 0 { 1.0 / x } else { x };
    let mut e = n.unsigned_abs();
    let mut acc = 1.0;
    while e > 0 {
        if e & 1 == 1 {
            acc *= base;
        }
        base *= base;
        e >>= 1;
    }
    acc
}

impl Real for f64 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    fn exp(&self) -> Self {
        libm::exp(*self)
    }
    fn ln(&self) -> Self {
        libm::log(*self)
    }
    fn tanh(&self) -> Self {
        libm::tanh(*self)
    }
    fn sigmoid(&self) -> Self {
        sigmoid_f64(*self)
    }
    fn softplus(&self) -> Self {
        softplus_f64(*self)
    }
    fn sin(&self) -> Self {
        libm::sin(*self)
    }
    fn cos(&self) -> Self {
        libm::cos(*self)
    }
    fn powi(&self, n: i32) -> Self {
        powi_f64(*self, n)
    }
    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
    }
}

/// First and second derivative of each unary primitive at `u`, expressed in
/// the same scalar type so jets can nest.
pub(crate) fn unary_derivatives<S: Real>(op: Unary, u: &S) -> (S, S, S) {
    match op {
        Unary::Exp => {
            let e = u.exp();
            (e.clone(), e.clone(), e)
        }
        Unary::Ln => {
            let r = S::from_f64(1.0) / u.clone();
            (u.ln(), r.clone(), -(r.clone() * r))
        }
        Unary::Tanh => {
            let t = u.tanh();
            let d1 = S::from_f64(1.0) - t.square();
            let d2 = t.clone() * d1.clone() * -2.0;
            (t, d1, d2)
        }
        Unary::Sigmoid => {
            let s = u.sigmoid();
            let d1 = s.clone() * (S::from_f64(1.0) - s.clone());
            let d2 = d1.clone() * (S::from_f64(1.0) - s.clone() * 2.0);
            (s, d1, d2)
        }
        Unary::Softplus => {
            let s = u.sigmoid();
            let d2 = s.clone() * (S::from_f64(1.0) - s.clone());
            (u.softplus(), s, d2)
        }
        Unary::Sin => {
            let (s, c) = (u.sin(), u.cos());
            (s.clone(), c, -s)
        }
        Unary::Cos => {
            let (s, c) = (u.sin(), u.cos());
            (c.clone(), -s, -c)
        }
        Unary::Powi(n) => match n {
            0 => (S::from_f64(1.0), S::from_f64(0.0), S::from_f64(0.0)),
            1 => (u.clone(), S::from_f64(1.0), S::from_f64(0.0)),
            _ => {
                let nm2 = u.powi(n - 2);
                let nm1 = nm2.clone() * u.clone();
                let f = u.powi(n);
                let nf = n as f64;
                (f, nm1 * nf, nm2 * (nf * (nf - 1.0)))
            }
        },
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Unary {
    Exp,
    Ln,
    Tanh,
    Sigmoid,
    Softplus,
    Sin,
    Cos,
    Powi(i32),
}
