//! Euler-Lagrange dynamics of an arbitrary scalar Lagrangian.
//!
//! For `L(q, q̇)` with `d` coordinates, the accelerations are
//!
//! ```text
//! q̈ = A⁺ [∇_q L − M q̇],   A = ∇_q̇ ∇_q̇ᵀ L,   M_ij = ∂²L / ∂q̇_i ∂q_j
//! ```
//!
//! where `A⁺` is the truncated pseudoinverse from [`crate::linalg`].

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::diffkit::{self, DerivativeBundle, Real, ScalarFn};
use crate::linalg::{Matrix, SymmetricPinv};
use crate::refsys::Trajectory;
use crate::{Error, Result};

/// Generalized coordinates and velocities at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub q: Vec<f64>,
    pub q_dot: Vec<f64>,
}

impl PhaseState {
    pub fn new(q: Vec<f64>, q_dot: Vec<f64>) -> Result<Self> {
        if q.is_empty() {
            return Err(Error::Usage("phase state needs at least one coordinate".into()));
        }
        if q.len() != q_dot.len() {
            return Err(Error::dim("velocity vector", q.len(), q_dot.len()));
        }
        let s = PhaseState { q, q_dot };
        if !s.is_finite() {
            return Err(Error::non_finite("phase state", &s.concat()));
        }
        Ok(s)
    }

    pub fn dof(&self) -> usize {
        self.q.len()
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.q_dot).all(|v| v.is_finite())
    }

    /// `(q, q̇)` as one vector.
    pub fn concat(&self) -> Vec<f64> {
        let mut v = self.q.clone();
        v.extend_from_slice(&self.q_dot);
        v
    }

    pub fn from_concat(x: &[f64]) -> Result<Self> {
        if x.len() % 2 != 0 {
            return Err(Error::Usage("phase vector must have even length".into()));
        }
        let d = x.len() / 2;
        Self::new(x[..d].to_vec(), x[d..].to_vec())
    }
}

/// Accelerations with the conditioning of the velocity Hessian.
#[derive(Debug, Clone, PartialEq)]
pub struct AccelResult {
    pub q_ddot: Vec<f64>,
    /// `σ_max / σ_min` of `∇_q̇ ∇_q̇ᵀ L`; infinite when singular.
    pub hessian_condition: f64,
    pub degenerate: bool,
}

/// A scalar Lagrangian of `d` coordinates and velocities.
pub trait Lagrangian {
    fn dof(&self) -> usize;

    fn eval<S: Real>(&self, q: &[S], q_dot: &[S]) -> S;

    fn value(&self, state: &PhaseState) -> f64 {
        self.eval(&state.q, &state.q_dot)
    }

    /// Value, gradient and Hessian over the concatenated `(q, q̇)`.
    fn bundle(&self, state: &PhaseState) -> Result<DerivativeBundle> {
        check_dof(self, state)?;
        diffkit::bundle(&AsScalarFn(self), &state.concat())
    }
}

impl<L: Lagrangian> Lagrangian for &L {
    fn dof(&self) -> usize {
        (**self).dof()
    }
    fn eval<S: Real>(&self, q: &[S], q_dot: &[S]) -> S {
        (**self).eval(q, q_dot)
    }
    fn bundle(&self, state: &PhaseState) -> Result<DerivativeBundle> {
        (**self).bundle(state)
    }
}

/// Views a Lagrangian as a function of the concatenated `(q, q̇)`.
pub struct AsScalarFn<'a, L: ?Sized>(pub &'a L);

impl<L: Lagrangian + ?Sized> ScalarFn for AsScalarFn<'_, L> {
    fn dim(&self) -> usize {
        2 * self.0.dof()
    }
    fn call<S: Real>(&self, x: &[S]) -> S {
        let d = self.0.dof();
        self.0.eval(&x[..d], &x[d..])
    }
}

fn check_dof<L: Lagrangian + ?Sized>(l: &L, state: &PhaseState) -> Result<()> {
    if l.dof() != state.dof() {
        return Err(Error::dim("phase state", l.dof(), state.dof()));
    }
    Ok(())
}

/// The blocks of the Euler-Lagrange system at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct ElSystem {
    /// `∇_q̇ ∇_q̇ᵀ L`.
    pub velocity_hessian: Matrix,
    /// `M_ij = ∂²L / ∂q̇_i ∂q_j`.
    pub mixed: Matrix,
    /// `∇_q L`.
    pub force: Vec<f64>,
}

impl ElSystem {
    /// Splits a bundle over `(q, q̇)` into its blocks.
    pub fn from_bundle(b: &DerivativeBundle) -> Self {
        let d = b.dim() / 2;
        ElSystem {
            velocity_hessian: b.hessian.block(d, d, d, d),
            mixed: b.hessian.block(d, 0, d, d),
            force: b.gradient[..d].to_vec(),
        }
    }

    /// `∇_q L − M q̇`.
    pub fn rhs(&self, q_dot: &[f64]) -> Vec<f64> {
        let mq = self.mixed.matvec(q_dot);
        self.force.iter().zip(mq).map(|(f, m)| f - m).collect()
    }

    pub fn solve(&self, q_dot: &[f64]) -> ElSolution {
        let pinv = SymmetricPinv::new(&self.velocity_hessian);
        let q_ddot = pinv.apply(&self.rhs(q_dot));
        ElSolution {
            accel: AccelResult {
                q_ddot,
                hessian_condition: pinv.condition(),
                degenerate: pinv.is_degenerate(),
            },
            pinv,
        }
    }
}

/// An acceleration solve together with the factorization that produced it.
#[derive(Debug, Clone)]
pub struct ElSolution {
    pub accel: AccelResult,
    pub pinv: SymmetricPinv,
}

impl ElSolution {
    /// Reverse-mode rule for `x = A⁺ (g − M q̇)`.
    ///
    /// With `λ = A⁺ x̄` for an upstream adjoint `x̄`, the input adjoints are
    /// `ḡ = λ`, `M̄ = −λ q̇ᵀ` and `Ā = −λ xᵀ`. This is the exact derivative
    /// when `A` has full rank.
    pub fn adjoint(&self, upstream: &[f64], q_dot: &[f64]) -> ElAdjoint {
        ElAdjoint {
            lambda: self.pinv.apply(upstream),
            accel: self.accel.q_ddot.clone(),
            q_dot: q_dot.to_vec(),
        }
    }
}

/// Adjoints of the Euler-Lagrange blocks, see [`ElSolution::adjoint`].
#[derive(Debug, Clone)]
pub struct ElAdjoint {
    pub lambda: Vec<f64>,
    accel: Vec<f64>,
    q_dot: Vec<f64>,
}

impl ElAdjoint {
    pub fn force(&self, i: usize) -> f64 {
        self.lambda[i]
    }

    /// Adjoint of `M_ij`.
    pub fn mixed(&self, i: usize, j: usize) -> f64 {
        -self.lambda[i] * self.q_dot[j]
    }

    /// Adjoint of `A_ij` treated as an independent entry.
    pub fn velocity_hessian(&self, i: usize, j: usize) -> f64 {
        -self.lambda[i] * self.accel[j]
    }

    /// Adjoint of the single symmetric-storage entry holding `A_ij = A_ji`.
    pub fn velocity_hessian_sym(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.velocity_hessian(i, i)
        } else {
            self.velocity_hessian(i, j) + self.velocity_hessian(j, i)
        }
    }
}

/// Accelerations of `l` at `state`.
///
/// A degenerate velocity Hessian is flagged, not rejected: the truncated
/// pseudoinverse is used and `degenerate` is set.
pub fn accel<L: Lagrangian + ?Sized>(l: &L, state: &PhaseState) -> Result<AccelResult> {
    let b = l.bundle(state)?;
    if !b.is_finite() {
        return Err(Error::non_finite("accel", &state.concat()));
    }
    let sol = ElSystem::from_bundle(&b).solve(&state.q_dot);
    if !sol.accel.degenerate && sol.accel.q_ddot.iter().any(|a| !a.is_finite()) {
        return Err(Error::non_finite("accel", &state.concat()));
    }
    Ok(sol.accel)
}

fn phase_gradient<L: Lagrangian + ?Sized>(l: &L, state: &PhaseState) -> Result<Vec<f64>> {
    check_dof(l, state)?;
    diffkit::gradient(&AsScalarFn(l), &state.concat())
}

/// `Π = ∇_q̇ L`.
pub fn canonical_momentum<L: Lagrangian + ?Sized>(l: &L, state: &PhaseState) -> Result<Vec<f64>> {
    let g = phase_gradient(l, state)?;
    Ok(g[state.dof()..].to_vec())
}

/// Legendre-transform energy `H = Π·q̇ − L`.
pub fn learned_energy<L: Lagrangian + ?Sized>(l: &L, state: &PhaseState) -> Result<f64> {
    let p = canonical_momentum(l, state)?;
    let pq: f64 = p.iter().zip(&state.q_dot).map(|(a, b)| a * b).sum();
    Ok(pq - l.value(state))
}

/// Tolerance on timestep uniformity.
pub const UNIFORM_STEP_TOL: f64 = 1e-12;

/// Euler-Lagrange residual at every interior sample:
/// `[Π(t+h) − Π(t−h)] / 2h − ∇_q L(t)`.
pub fn el_residual<L: Lagrangian + ?Sized>(l: &L, traj: &Trajectory) -> Result<Vec<Vec<f64>>> {
    let n = traj.states.len();
    if n < 3 {
        return Err(Error::Usage(alloc::format!(
            "residual needs at least 3 samples, got {n}"
        )));
    }
    let h = traj.h;
    for w in traj.times.windows(2) {
        if (w[1] - w[0] - h).abs() > UNIFORM_STEP_TOL {
            return Err(Error::Usage("trajectory timestep is not uniform".into()));
        }
    }
    let d = l.dof();
    let grads = traj
        .states
        .iter()
        .map(|s| phase_gradient(l, s))
        .collect::<Result<Vec<_>>>()?;
    Ok((1..n - 1)
        .map(|k| {
            (0..d)
                .map(|i| (grads[k + 1][d + i] - grads[k - 1][d + i]) / (2.0 * h) - grads[k][i])
                .collect()
        })
        .collect())
}

/// `c · L`.
#[derive(Debug, Clone)]
pub struct Scaled<L> {
    pub factor: f64,
    pub inner: L,
}

impl<L: Lagrangian> Lagrangian for Scaled<L> {
    fn dof(&self) -> usize {
        self.inner.dof()
    }
    fn eval<S: Real>(&self, q: &[S], q_dot: &[S]) -> S {
        self.inner.eval(q, q_dot) * self.factor
    }
}

/// A function `F(q)` whose total time derivative can be added to a
/// Lagrangian without changing its dynamics.
pub trait GaugeFunction {
    /// `∇F(q)`.
    fn gradient<S: Real>(&self, q: &[S]) -> Vec<S>;
}

/// `F(q) = ½‖q‖²`.
#[derive(Debug, Clone, Copy)]
pub struct HalfSquaredNorm;

impl GaugeFunction for HalfSquaredNorm {
    fn gradient<S: Real>(&self, q: &[S]) -> Vec<S> {
        q.to_vec()
    }
}

/// `F(q) = q₁ q₂` (zero-based `q[0] q[1]`).
#[derive(Debug, Clone, Copy)]
pub struct PairProduct;

impl GaugeFunction for PairProduct {
    fn gradient<S: Real>(&self, q: &[S]) -> Vec<S> {
        let mut g = vec![S::from_f64(0.0); q.len()];
        if q.len() >= 2 {
            g[0] = q[1].clone();
            g[1] = q[0].clone();
        }
        g
    }
}

/// `L + dF(q)/dt = L + ∇F(q)·q̇`.
#[derive(Debug, Clone)]
pub struct WithTotalDerivative<L, F> {
    pub inner: L,
    pub gauge: F,
}

impl<L: Lagrangian, F: GaugeFunction> Lagrangian for WithTotalDerivative<L, F> {
    fn dof(&self) -> usize {
        self.inner.dof()
    }
    fn eval<S: Real>(&self, q: &[S], q_dot: &[S]) -> S {
        let g = self.gauge.gradient(q);
        self.inner.eval(q, q_dot) + S::dot(&g, q_dot)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct FreeParticle;
    impl Lagrangian for FreeParticle {
        fn dof(&self) -> usize {
            2
        }
        fn eval<S: Real>(&self, _q: &[S], qd: &[S]) -> S {
            S::dot(qd, qd) * 0.5
        }
    }

    struct Harmonic;
    impl Lagrangian for Harmonic {
        fn dof(&self) -> usize {
            1
        }
        fn eval<S: Real>(&self, q: &[S], qd: &[S]) -> S {
            (qd[0].square() - q[0].square()) * 0.5
        }
    }

    struct Pendulum;
    impl Lagrangian for Pendulum {
        fn dof(&self) -> usize {
            1
        }
        fn eval<S: Real>(&self, q: &[S], qd: &[S]) -> S {
            qd[0].square() * 0.5 + q[0].cos()
        }
    }

    /// `L = q̇ q`, linear in the velocity.
    struct LinearInVelocity;
    impl Lagrangian for LinearInVelocity {
        fn dof(&self) -> usize {
            1
        }
        fn eval<S: Real>(&self, q: &[S], qd: &[S]) -> S {
            qd[0].clone() * q[0].clone()
        }
    }

    struct Mass(f64);
    impl Lagrangian for Mass {
        fn dof(&self) -> usize {
            1
        }
        fn eval<S: Real>(&self, _q: &[S], qd: &[S]) -> S {
            qd[0].square() * (0.5 * self.0)
        }
    }

    fn st(q: &[f64], qd: &[f64]) -> PhaseState {
        PhaseState::new(q.to_vec(), qd.to_vec()).unwrap()
    }

    #[test]
    fn accel_examples() {
        let a = accel(&FreeParticle, &st(&[0.3, -1.0], &[2.0, 0.5])).unwrap();
        assert_eq!(a.q_ddot, vec![0.0, 0.0]);
        assert!(!a.degenerate);
        assert_eq!(a.hessian_condition, 1.0);

        let a = accel(&Harmonic, &st(&[1.0], &[0.0])).unwrap();
        assert!((a.q_ddot[0] + 1.0).abs() < 1e-15);

        let a = accel(&Pendulum, &st(&[core::f64::consts::FRAC_PI_2], &[0.0])).unwrap();
        assert!((a.q_ddot[0] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn linear_in_velocity_is_degenerate() {
        let a = accel(&LinearInVelocity, &st(&[0.4], &[1.1])).unwrap();
        assert!(a.degenerate);
        assert_eq!(a.hessian_condition, f64::INFINITY);
        assert_eq!(a.q_ddot, vec![0.0]);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        assert!(matches!(
            accel(&Harmonic, &st(&[1.0, 2.0], &[0.0, 0.0])),
            Err(Error::Dimension { .. })
        ));
        assert!(PhaseState::new(vec![1.0], vec![]).is_err());
        assert!(PhaseState::new(vec![f64::NAN], vec![0.0]).is_err());
    }

    #[test]
    fn momentum_examples() {
        assert_eq!(canonical_momentum(&Mass(2.0), &st(&[0.0], &[3.0])).unwrap(), vec![6.0]);
        struct NoVelocity;
        impl Lagrangian for NoVelocity {
            fn dof(&self) -> usize {
                2
            }
            fn eval<S: Real>(&self, q: &[S], _qd: &[S]) -> S {
                q[0].sin() * q[1].clone()
            }
        }
        assert_eq!(
            canonical_momentum(&NoVelocity, &st(&[0.2, 0.1], &[1.0, 2.0])).unwrap(),
            vec![0.0, 0.0]
        );
        assert_eq!(canonical_momentum(&Pendulum, &st(&[1.3], &[0.7])).unwrap(), vec![0.7]);
    }

    #[test]
    fn energy_examples() {
        let free = Mass(1.0);
        assert_eq!(learned_energy(&free, &st(&[0.0], &[2.0])).unwrap(), 2.0);
        assert_eq!(learned_energy(&Harmonic, &st(&[1.0], &[0.0])).unwrap(), 0.5);
        assert_eq!(learned_energy(&Pendulum, &st(&[0.0], &[0.0])).unwrap(), -1.0);
    }

    #[test]
    fn scaling_and_gauge_leave_accel_unchanged() {
        let s = st(&[0.3, -0.8], &[0.4, 1.2]);
        let base = accel(&FreeParticle, &s).unwrap().q_ddot;
        for c in [0.5, 2.0, 10.0] {
            let a = accel(&Scaled { factor: c, inner: FreeParticle }, &s).unwrap();
            for (x, y) in a.q_ddot.iter().zip(&base) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        let a = accel(
            &WithTotalDerivative {
                inner: FreeParticle,
                gauge: PairProduct,
            },
            &s,
        )
        .unwrap();
        for (x, y) in a.q_ddot.iter().zip(&base) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn mixed_block_uses_velocity_row_convention() {
        // L = ½q̇₁² + ½q̇₂² + q̇₁ q₂: the magnetic-like term makes M asymmetric,
        // M_12 = ∂²L/∂q̇₁∂q₂ = 1, M_21 = 0. The equations of motion are
        // q̈₁ = −q̇₂ and q̈₂ = q̇₁.
        struct Magnetic;
        impl Lagrangian for Magnetic {
            fn dof(&self) -> usize {
                2
            }
            fn eval<S: Real>(&self, q: &[S], qd: &[S]) -> S {
                S::dot(qd, qd) * 0.5 + qd[0].clone() * q[1].clone()
            }
        }
        let s = st(&[0.1, 0.2], &[0.7, -0.3]);
        let b = Magnetic.bundle(&s).unwrap();
        let sys = ElSystem::from_bundle(&b);
        assert_eq!(sys.mixed[(0, 1)], 1.0);
        assert_eq!(sys.mixed[(1, 0)], 0.0);
        let a = accel(&Magnetic, &s).unwrap().q_ddot;
        assert!((a[0] - 0.3).abs() < 1e-14);
        assert!((a[1] - 0.7).abs() < 1e-14);
    }
}
