use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Add, Div, Mul, Neg, Sub};

use super::real::{unary_derivatives, Affine, Real, Unary};

/// Index of `(i, j)` in packed lower-triangular storage.
#[inline]
pub fn packed_index(i: usize, j: usize) -> usize {
    let (r, c) = if i >= j { (i, j) } else { (j, i) };
    r * (r + 1) / 2 + c
}

/// Second-order forward jet: a value with its gradient and Hessian with
/// respect to `n` seeded input variables.
///
/// The Hessian is kept in packed lower-triangular form, so it is symmetric by
/// construction. A jet with empty `grad` and `hess` is a constant.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet2<S> {
    pub value: S,
    pub grad: Vec<S>,
    pub hess: Vec<S>,
}

impl<S: Real> Jet2<S> {
    pub fn constant(value: S) -> Self {
        Jet2 {
            value,
            grad: Vec::new(),
            hess: Vec::new(),
        }
    }

    /// Input variable `index` of `n`.
    pub fn variable(value: S, index: usize, n: usize) -> Self {
        Self::seeded(value, index, 1.0, n)
    }

    /// Input variable `index` of `n` whose derivative with respect to the
    /// underlying coordinate is `slope` (used for affine input transforms).
    pub fn seeded(value: S, index: usize, slope: f64, n: usize) -> Self {
        let mut grad = vec![S::from_f64(0.0); n];
        grad[index] = S::from_f64(slope);
        Jet2 {
            value,
            grad,
            hess: vec![S::from_f64(0.0); n * (n + 1) / 2],
        }
    }

    /// Jets for every coordinate of `x`.
    pub fn variables(x: &[S]) -> Vec<Self> {
        let n = x.len();
        x.iter()
            .enumerate()
            .map(|(i, xi)| Self::variable(xi.clone(), i, n))
            .collect()
    }

    pub fn is_constant(&self) -> bool {
        self.grad.is_empty()
    }

    pub fn nvars(&self) -> usize {
        self.grad.len()
    }

    pub fn hess_at(&self, i: usize, j: usize) -> S {
        if self.hess.is_empty() {
            S::from_f64(0.0)
        } else {
            self.hess[packed_index(i, j)].clone()
        }
    }

    fn scaled(&self, c: f64) -> Self {
        Jet2 {
            value: self.value.clone() * c,
            grad: self.grad.iter().map(|g| g.clone() * c).collect(),
            hess: self.hess.iter().map(|h| h.clone() * c).collect(),
        }
    }

    fn scaled_by(&self, c: &S) -> (Vec<S>, Vec<S>) {
        (
            self.grad.iter().map(|g| g.clone() * c.clone()).collect(),
            self.hess.iter().map(|h| h.clone() * c.clone()).collect(),
        )
    }

    fn unary(&self, op: Unary) -> Self {
        let (f0, f1, f2) = unary_derivatives(op, &self.value);
        if self.is_constant() {
            return Jet2::constant(f0);
        }
        let n = self.nvars();
        let grad: Vec<S> = self.grad.iter().map(|g| f1.clone() * g.clone()).collect();
        let curv: Vec<S> = self.grad.iter().map(|g| f2.clone() * g.clone()).collect();
        let mut hess = Vec::with_capacity(self.hess.len());
        for i in 0..n {
            for j in 0..=i {
                let k = i * (i + 1) / 2 + j;
                hess.push(
                    f1.clone() * self.hess[k].clone() + curv[i].clone() * self.grad[j].clone(),
                );
            }
        }
        Jet2 {
            value: f0,
            grad,
            hess,
        }
    }
}

fn merge<S: Real>(a: &[S], b: &[S], f: impl Fn(S, S) -> S, neg_b: bool) -> Vec<S> {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => Vec::new(),
        (false, true) => a.to_vec(),
        (true, false) => {
            if neg_b {
                b.iter().map(|x| -x.clone()).collect()
            } else {
                b.to_vec()
            }
        }
        (false, false) => {
            debug_assert_eq!(a.len(), b.len(), "jets over different variable sets");
            a.iter()
                .zip(b)
                .map(|(x, y)| f(x.clone(), y.clone()))
                .collect()
        }
    }
}

impl<S: Real> Add for Jet2<S> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Jet2 {
            value: self.value + rhs.value,
            grad: merge(&self.grad, &rhs.grad, |x, y| x + y, false),
            hess: merge(&self.hess, &rhs.hess, |x, y| x + y, false),
        }
    }
}

impl<S: Real> Sub for Jet2<S> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Jet2 {
            value: self.value - rhs.value,
            grad: merge(&self.grad, &rhs.grad, |x, y| x - y, true),
            hess: merge(&self.hess, &rhs.hess, |x, y| x - y, true),
        }
    }
}

impl<S: Real> Mul for Jet2<S> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let value = self.value.clone() * rhs.value.clone();
        match (self.is_constant(), rhs.is_constant()) {
            (true, true) => Jet2::constant(value),
            (true, false) => {
                let (grad, hess) = rhs.scaled_by(&self.value);
                Jet2 { value, grad, hess }
            }
            (false, true) => {
                let (grad, hess) = self.scaled_by(&rhs.value);
                Jet2 { value, grad, hess }
            }
            (false, false) => {
                let n = self.nvars();
                let grad = (0..n)
                    .map(|i| {
                        self.value.clone() * rhs.grad[i].clone()
                            + rhs.value.clone() * self.grad[i].clone()
                    })
                    .collect();
                let mut hess = Vec::with_capacity(self.hess.len());
                for i in 0..n {
                    for j in 0..=i {
                        let k = i * (i + 1) / 2 + j;
                        hess.push(
                            self.value.clone() * rhs.hess[k].clone()
                                + rhs.value.clone() * self.hess[k].clone()
                                + self.grad[i].clone() * rhs.grad[j].clone()
                                + self.grad[j].clone() * rhs.grad[i].clone(),
                        );
                    }
                }
                Jet2 { value, grad, hess }
            }
        }
    }
}

impl<S: Real> Div for Jet2<S> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let value = self.value.clone() / rhs.value.clone();
        if rhs.is_constant() {
            let grad = self
                .grad
                .iter()
                .map(|g| g.clone() / rhs.value.clone())
                .collect();
            let hess = self
                .hess
                .iter()
                .map(|h| h.clone() / rhs.value.clone())
                .collect();
            return Jet2 { value, grad, hess };
        }
        // a = q·b, solved for the derivatives of q.
        let n = rhs.nvars();
        let b = rhs.value.clone();
        let zero = S::from_f64(0.0);
        let a_grad = |i: usize| {
            if self.is_constant() {
                zero.clone()
            } else {
                self.grad[i].clone()
            }
        };
        let grad: Vec<S> = (0..n)
            .map(|i| (a_grad(i) - value.clone() * rhs.grad[i].clone()) / b.clone())
            .collect();
        let mut hess = Vec::with_capacity(rhs.hess.len());
        for i in 0..n {
            for j in 0..=i {
                let k = i * (i + 1) / 2 + j;
                let a_h = if self.is_constant() {
                    zero.clone()
                } else {
                    self.hess[k].clone()
                };
                hess.push(
                    (a_h - value.clone() * rhs.hess[k].clone()
                        - rhs.grad[i].clone() * grad[j].clone()
                        - rhs.grad[j].clone() * grad[i].clone())
                        / b.clone(),
                );
            }
        }
        Jet2 { value, grad, hess }
    }
}

impl<S: Real> Neg for Jet2<S> {
    type Output = Self;
    fn neg(self) -> Self {
        Jet2 {
            value: -self.value,
            grad: self.grad.into_iter().map(|g| -g).collect(),
            hess: self.hess.into_iter().map(|h| -h).collect(),
        }
    }
}

impl<S: Real> Add<f64> for Jet2<S> {
    type Output = Self;
    fn add(mut self, rhs: f64) -> Self {
        self.value = self.value + rhs;
        self
    }
}

impl<S: Real> Sub<f64> for Jet2<S> {
    type Output = Self;
    fn sub(mut self, rhs: f64) -> Self {
        self.value = self.value - rhs;
        self
    }
}

impl<S: Real> Mul<f64> for Jet2<S> {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        self.scaled(rhs)
    }
}

impl<S: Real> Div<f64> for Jet2<S> {
    type Output = Self;
    fn div(self, rhs: f64) -> Self {
        Jet2 {
            value: self.value / rhs,
            grad: self.grad.into_iter().map(|g| g / rhs).collect(),
            hess: self.hess.into_iter().map(|h| h / rhs).collect(),
        }
    }
}

impl<S: Real> Real for Jet2<S> {
    fn from_f64(x: f64) -> Self {
        Jet2::constant(S::from_f64(x))
    }
    fn value(&self) -> f64 {
        self.value.value()
    }
    fn exp(&self) -> Self {
        self.unary(Unary::Exp)
    }
    fn ln(&self) -> Self {
        self.unary(Unary::Ln)
    }
    fn tanh(&self) -> Self {
        self.unary(Unary::Tanh)
    }
    fn sigmoid(&self) -> Self {
        self.unary(Unary::Sigmoid)
    }
    fn softplus(&self) -> Self {
        self.unary(Unary::Softplus)
    }
    fn sin(&self) -> Self {
        self.unary(Unary::Sin)
    }
    fn cos(&self) -> Self {
        self.unary(Unary::Cos)
    }
    fn powi(&self, n: i32) -> Self {
        self.unary(Unary::Powi(n))
    }
}

impl<S: Real> Affine<S> for Jet2<S> {
    fn affine(weights: &[S], inputs: &[Self], bias: &S) -> Self {
        debug_assert_eq!(weights.len(), inputs.len());
        let values: Vec<S> = inputs.iter().map(|x| x.value.clone()).collect();
        let value = S::dot(weights, &values) + bias.clone();
        let n = inputs.iter().map(|x| x.nvars()).max().unwrap_or(0);
        if n == 0 {
            return Jet2::constant(value);
        }
        let zero = S::from_f64(0.0);
        let mut column = Vec::with_capacity(inputs.len());
        let mut component = |pick: &dyn Fn(&Jet2<S>) -> S| {
            column.clear();
            column.extend(inputs.iter().map(pick));
            S::dot(weights, &column)
        };
        let grad = (0..n)
            .map(|i| {
                component(&|x: &Jet2<S>| {
                    if x.is_constant() {
                        zero.clone()
                    } else {
                        x.grad[i].clone()
                    }
                })
            })
            .collect();
        let hess = (0..n * (n + 1) / 2)
            .map(|k| {
                component(&|x: &Jet2<S>| {
                    if x.is_constant() {
                        zero.clone()
                    } else {
                        x.hess[k].clone()
                    }
                })
            })
            .collect();
        Jet2 { value, grad, hess }
    }
}
