use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;
use core::fmt;
use core::ops::{Add, Div, Mul, Neg, Sub};

use super::real::{powi_f64, sigmoid_f64, softplus_f64, Real};

const CONST_ID: u32 = u32::MAX;

/// Reverse-mode recording of elementary operations.
///
/// Each node stores the local partial derivatives with respect to its
/// parents. Nodes may have any number of parents, so a whole dot product is a
/// single node. A tape is confined to one thread; results of a reverse sweep
/// are plain vectors.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<Nodes>,
}

#[derive(Default)]
struct Nodes {
    starts: Vec<u32>,
    parents: Vec<u32>,
    partials: Vec<f64>,
}

impl Nodes {
    fn len(&self) -> usize {
        self.starts.len()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tape")
            .field("nodes", &inner.len())
            .field("edges", &inner.parents.len())
            .finish()
    }
}

/// A value recorded on a [`Tape`], or a constant that is not recorded.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    value: f64,
    id: u32,
    tape: Option<&'t Tape>,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_constant() {
            write!(f, "Const({})", self.value)
        } else {
            write!(f, "Var#{}({})", self.id, self.value)
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize, edges: usize) -> Self {
        Tape {
            inner: RefCell::new(Nodes {
                starts: Vec::with_capacity(nodes),
                parents: Vec::with_capacity(edges),
                partials: Vec::with_capacity(edges),
            }),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops every node while keeping the allocations.
    pub fn clear(&mut self) {
        let inner = self.inner.get_mut();
        inner.starts.clear();
        inner.parents.clear();
        inner.partials.clear();
    }

    /// A new independent variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let id = inner.len() as u32;
        let start = inner.parents.len() as u32;
        inner.starts.push(start);
        Var {
            value,
            id,
            tape: Some(self),
        }
    }

    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    fn push<'t>(&'t self, value: f64, edges: impl Iterator<Item = (u32, f64)>) -> Var<'t> {
        let mut inner = self.inner.borrow_mut();
        let id = inner.len() as u32;
        let start = inner.parents.len() as u32;
        inner.starts.push(start);
        for (p, w) in edges {
            inner.parents.push(p);
            inner.partials.push(w);
        }
        Var {
            value,
            id,
            tape: Some(self),
        }
    }

    /// Reverse sweep from several weighted outputs at once.
    ///
    /// Returns the adjoint of every node: `Σ_k seed_k ∂output_k/∂node`.
    pub fn adjoints(&self, seeds: &[(Var<'_>, f64)]) -> Vec<f64> {
        let inner = self.inner.borrow();
        let n = inner.len();
        let mut adj = vec![0.0; n];
        for (v, s) in seeds {
            if !v.is_constant() {
                adj[v.id as usize] += *s;
            }
        }
        for i in (0..n).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let start = inner.starts[i] as usize;
            let end = inner
                .starts
                .get(i + 1)
                .map_or(inner.parents.len(), |&e| e as usize);
            for k in start..end {
                adj[inner.parents[k] as usize] += inner.partials[k] * a;
            }
        }
        adj
    }

    /// Gradient of `output` with respect to `wrt`.
    pub fn gradient(&self, output: Var<'_>, wrt: &[Var<'_>]) -> Vec<f64> {
        let adj = self.adjoints(&[(output, 1.0)]);
        wrt.iter().map(|v| v.adjoint_in(&adj)).collect()
    }
}

impl<'t> Var<'t> {
    pub fn constant(value: f64) -> Self {
        Var {
            value,
            id: CONST_ID,
            tape: None,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.id == CONST_ID
    }

    /// Position on the tape, `None` for constants.
    pub fn id(&self) -> Option<usize> {
        (!self.is_constant()).then_some(self.id as usize)
    }

    /// Reads this variable's entry from an adjoint vector.
    pub fn adjoint_in(&self, adjoints: &[f64]) -> f64 {
        self.id().map_or(0.0, |i| adjoints[i])
    }

    fn unary(self, value: f64, partial: f64) -> Self {
        match self.tape {
            Some(t) => t.push(value, core::iter::once((self.id, partial))),
            None => Var::constant(value),
        }
    }

    fn binary(self, rhs: Self, value: f64, da: f64, db: f64) -> Self {
        match self.tape.or(rhs.tape) {
            None => Var::constant(value),
            Some(t) => {
                let edges = [(self.id, da), (rhs.id, db)];
                t.push(value, edges.into_iter().filter(|(id, _)| *id != CONST_ID))
            }
        }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, self.value + rhs.value, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, self.value - rhs.value, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, self.value * rhs.value, rhs.value, self.value)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let q = self.value / rhs.value;
        self.binary(rhs, q, 1.0 / rhs.value, -q / rhs.value)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(-self.value, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Self;
    fn add(self, rhs: f64) -> Self {
        self.unary(self.value + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Self;
    fn sub(self, rhs: f64) -> Self {
        self.unary(self.value - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        self.unary(self.value * rhs, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Self;
    fn div(self, rhs: f64) -> Self {
        self.unary(self.value / rhs, 1.0 / rhs)
    }
}

impl<'t> Real for Var<'t> {
    fn from_f64(x: f64) -> Self {
        Var::constant(x)
    }
    fn value(&self) -> f64 {
        self.value
    }
    fn exp(&self) -> Self {
        let e = libm::exp(self.value);
        self.unary(e, e)
    }
    fn ln(&self) -> Self {
        self.unary(libm::log(self.value), 1.0 / self.value)
    }
    fn tanh(&self) -> Self {
        let t = libm::tanh(self.value);
        self.unary(t, 1.0 - t * t)
    }
    fn sigmoid(&self) -> Self {
        let s = sigmoid_f64(self.value);
        self.unary(s, s * (1.0 - s))
    }
    fn softplus(&self) -> Self {
        self.unary(softplus_f64(self.value), sigmoid_f64(self.value))
    }
    fn sin(&self) -> Self {
        self.unary(libm::sin(self.value), libm::cos(self.value))
    }
    fn cos(&self) -> Self {
        self.unary(libm::cos(self.value), -libm::sin(self.value))
    }
    fn powi(&self, n: i32) -> Self {
        let d = if n == 0 {
            0.0
        } else {
            n as f64 * powi_f64(self.value, n - 1)
        };
        self.unary(powi_f64(self.value, n), d)
    }

    fn dot(a: &[Self], b: &[Self]) -> Self {
        debug_assert_eq!(a.len(), b.len());
        let value = a
            .iter()
            .zip(b)
            .fold(0.0, |acc, (x, y)| acc + x.value * y.value);
        let tape = a.iter().chain(b).find_map(|v| v.tape);
        match tape {
            None => Var::constant(value),
            Some(t) => {
                let edges = a.iter().zip(b).flat_map(|(x, y)| {
                    [(x.id, y.value), (y.id, x.value)]
                        .into_iter()
                        .filter(|(id, _)| *id != CONST_ID)
                });
                t.push(value, edges)
            }
        }
    }
}
