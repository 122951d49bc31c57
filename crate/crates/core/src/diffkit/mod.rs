//! Differentiation engine.
//!
//! Two independent mechanisms share the [`Real`] scalar interface:
//!
//! * [`Jet2`], a forward-mode jet carrying value, gradient and packed Hessian
//!   with respect to the inputs;
//! * [`Tape`] / [`Var`], a reverse-mode recording used for gradients with
//!   respect to many parameters.
//!
//! They compose: a `Jet2<Var>` carries input gradients and Hessians whose
//! entries are tape variables, so a loss built from input Hessians can be
//! differentiated with respect to network parameters. Where that loss goes
//! through a matrix pseudoinverse, the pseudoinverse step is differentiated
//! analytically and enters the reverse sweep as a set of seeds (see
//! [`TapeLoss`]).

mod jet;
mod real;
mod tape;

use alloc::vec;
use alloc::vec::Vec;

pub use jet::{packed_index, Jet2};
pub use real::{Affine, Real};
pub use tape::{Tape, Var};

use crate::linalg::Matrix;
use crate::{Error, Result};

/// A scalar function of a fixed-length real vector, generic over the scalar
/// so that every engine can evaluate it.
pub trait ScalarFn {
    fn dim(&self) -> usize;
    fn call<S: Real>(&self, x: &[S]) -> S;
}

/// Value, gradient and Hessian of a scalar function at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeBundle {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: Matrix,
}

impl DerivativeBundle {
    /// Unpacks a jet over `n` inputs.
    pub fn from_jet(jet: &Jet2<f64>, n: usize) -> Self {
        let mut hessian = Matrix::zeros(n, n);
        let mut gradient = vec![0.0; n];
        if !jet.is_constant() {
            gradient.copy_from_slice(&jet.grad);
            for i in 0..n {
                for j in 0..=i {
                    let h = jet.hess[packed_index(i, j)];
                    hessian[(i, j)] = h;
                    hessian[(j, i)] = h;
                }
            }
        }
        DerivativeBundle {
            value: jet.value,
            gradient,
            hessian,
        }
    }

    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.gradient.iter().all(|g| g.is_finite())
            && self.hessian.as_slice().iter().all(|h| h.is_finite())
    }
}

fn check_dim<F: ScalarFn>(f: &F, x: &[f64]) -> Result<()> {
    if f.dim() != x.len() {
        return Err(Error::dim("function input", f.dim(), x.len()));
    }
    Ok(())
}

/// `f(x)` in double precision.
pub fn evaluate<F: ScalarFn>(f: &F, x: &[f64]) -> Result<f64> {
    check_dim(f, x)?;
    Ok(f.call(x))
}

/// `∇f(x)` by one reverse sweep.
pub fn gradient<F: ScalarFn>(f: &F, x: &[f64]) -> Result<Vec<f64>> {
    check_dim(f, x)?;
    let tape = Tape::new();
    let inputs = tape.vars(x);
    let out = f.call(&inputs);
    if !out.value().is_finite() {
        return Err(Error::non_finite("gradient", x));
    }
    let g = tape.gradient(out, &inputs);
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("gradient", x));
    }
    Ok(g)
}

/// Value, gradient and Hessian by forward second-order propagation.
pub fn bundle<F: ScalarFn>(f: &F, x: &[f64]) -> Result<DerivativeBundle> {
    check_dim(f, x)?;
    let jets = Jet2::variables(x);
    let out = f.call(&jets);
    let b = DerivativeBundle::from_jet(&out, x.len());
    if !b.is_finite() {
        return Err(Error::non_finite("hessian", x));
    }
    Ok(b)
}

/// The symmetric matrix of second partials of `f` at `x`.
pub fn hessian<F: ScalarFn>(f: &F, x: &[f64]) -> Result<Matrix> {
    bundle(f, x).map(|b| b.hessian)
}

/// Output of recording a loss on a tape.
#[derive(Debug, Clone)]
pub struct Recorded<'t> {
    pub loss: f64,
    /// Reverse-sweep seeds: each pair contributes `seed · ∂var/∂θ` to the
    /// gradient. A plain scalar loss is the single pair `(output, 1)`.
    pub seeds: Vec<(Var<'t>, f64)>,
    /// Set when an interior pseudoinverse was truncated.
    pub degenerate: bool,
}

impl<'t> Recorded<'t> {
    pub fn scalar(output: Var<'t>) -> Self {
        Recorded {
            loss: output.value(),
            seeds: vec![(output, 1.0)],
            degenerate: false,
        }
    }
}

/// A loss over a parameter vector that can record itself on a tape.
///
/// Implementations whose computation passes through steps the tape does not
/// record (such as a pseudoinverse) return the adjoints of that step's inputs
/// as seeds instead of a single output variable.
pub trait TapeLoss {
    fn param_count(&self) -> usize;
    fn record<'t>(&self, tape: &'t Tape, theta: &[Var<'t>]) -> Result<Recorded<'t>>;
}

/// Adapts a [`ScalarFn`] of the parameters into a [`TapeLoss`].
pub struct PlainLoss<F>(pub F);

impl<F: ScalarFn> TapeLoss for PlainLoss<F> {
    fn param_count(&self) -> usize {
        self.0.dim()
    }
    fn record<'t>(&self, _tape: &'t Tape, theta: &[Var<'t>]) -> Result<Recorded<'t>> {
        Ok(Recorded::scalar(self.0.call(theta)))
    }
}

/// Loss value and `∂loss/∂θ_k` for every parameter index `k`.
pub fn parameter_gradient<L: TapeLoss>(loss: &L, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
    if loss.param_count() != theta.len() {
        return Err(Error::dim("parameter vector", loss.param_count(), theta.len()));
    }
    let tape = Tape::new();
    let params = tape.vars(theta);
    let rec = loss.record(&tape, &params)?;
    let adj = tape.adjoints(&rec.seeds);
    let grad: Vec<f64> = params.iter().map(|p| p.adjoint_in(&adj)).collect();
    if !rec.loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::non_finite("parameter gradient", theta));
    }
    Ok((rec.loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Square;
    impl ScalarFn for Square {
        fn dim(&self) -> usize {
            1
        }
        fn call<S: Real>(&self, x: &[S]) -> S {
            x[0].clone() * x[0].clone()
        }
    }

    struct Softplus;
    impl ScalarFn for Softplus {
        fn dim(&self) -> usize {
            1
        }
        fn call<S: Real>(&self, x: &[S]) -> S {
            x[0].softplus()
        }
    }

    struct X2Y;
    impl ScalarFn for X2Y {
        fn dim(&self) -> usize {
            2
        }
        fn call<S: Real>(&self, x: &[S]) -> S {
            x[0].square() * x[1].clone()
        }
    }

    struct HalfNorm(usize);
    impl ScalarFn for HalfNorm {
        fn dim(&self) -> usize {
            self.0
        }
        fn call<S: Real>(&self, x: &[S]) -> S {
            S::dot(x, x) * 0.5
        }
    }

    struct Constant;
    impl ScalarFn for Constant {
        fn dim(&self) -> usize {
            3
        }
        fn call<S: Real>(&self, _x: &[S]) -> S {
            S::from_f64(4.25)
        }
    }

    #[test]
    fn evaluate_examples() {
        assert_eq!(evaluate(&Square, &[3.0]).unwrap(), 9.0);
        assert!((evaluate(&Softplus, &[0.0]).unwrap() - core::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(evaluate(&X2Y, &[2.0, 3.0]).unwrap(), 12.0);
    }

    #[test]
    fn evaluate_rejects_wrong_dimension() {
        let err = evaluate(&X2Y, &[1.0]).unwrap_err();
        assert_eq!(
            err,
            Error::Dimension {
                context: "function input",
                expected: 2,
                actual: 1
            }
        );
    }

    #[test]
    fn gradient_examples() {
        assert_eq!(gradient(&Square, &[3.0]).unwrap(), vec![6.0]);
        assert_eq!(gradient(&Softplus, &[0.0]).unwrap(), vec![0.5]);
        assert_eq!(gradient(&X2Y, &[2.0, 3.0]).unwrap(), vec![12.0, 4.0]);
    }

    #[test]
    fn gradient_reports_non_finite() {
        struct Log;
        impl ScalarFn for Log {
            fn dim(&self) -> usize {
                1
            }
            fn call<S: Real>(&self, x: &[S]) -> S {
                x[0].ln()
            }
        }
        assert!(matches!(
            gradient(&Log, &[-1.0]),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn hessian_examples() {
        let h = hessian(&X2Y, &[2.0, 3.0]).unwrap();
        assert_eq!(h.as_slice(), &[6.0, 4.0, 4.0, 0.0]);
        let h = hessian(&Softplus, &[0.0]).unwrap();
        assert_eq!(h.as_slice(), &[0.25]);
    }

    #[test]
    fn bundle_value_matches_plain_evaluation() {
        let x = [0.3, -1.7];
        let b = bundle(&X2Y, &x).unwrap();
        assert_eq!(b.value, evaluate(&X2Y, &x).unwrap());
        assert_eq!(b.gradient, gradient(&X2Y, &x).unwrap());
    }

    #[test]
    fn parameter_gradient_examples() {
        let (loss, g) = parameter_gradient(&PlainLoss(HalfNorm(2)), &[1.0, -2.0]).unwrap();
        assert_eq!(loss, 2.5);
        assert_eq!(g, vec![1.0, -2.0]);
        let (_, g) = parameter_gradient(&PlainLoss(Constant), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn tape_constants_are_not_recorded() {
        let tape = Tape::new();
        let c = Var::constant(2.0) * Var::constant(3.0) + 1.0;
        assert!(c.is_constant());
        assert_eq!(c.value(), 7.0);
        assert!(tape.is_empty());
    }
}
