//! Lagrangian densities on a periodic 1-D lattice.
//!
//! A total Lagrangian `𝓛 = Σ_i 𝓛_i` is built from one local density applied
//! to the stencil of every site. Field accelerations follow from the same
//! Euler-Lagrange solve as in [`crate::eldyn`], with the whole field as the
//! coordinate vector. Because each density only sees a few neighbours, the
//! velocity Hessian is banded; [`field_accel_banded`] assembles it from local
//! second-order jets and solves it in linear time.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::diffkit::{self, packed_index, DerivativeBundle, Jet2, Real, ScalarFn, Var};
use crate::eldyn::{ElSystem, Lagrangian, PhaseState};
use crate::linalg::{CyclicBanded, Matrix, SymmetricPinv, PINV_RTOL};
use crate::netcore::Mlp;
use crate::{Error, Result};

/// Boundary rule for stencils that leave `0..n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    #[default]
    Periodic,
}

/// Field values and velocities on `n` sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub phi: Vec<f64>,
    pub phi_dot: Vec<f64>,
    pub dx: f64,
    #[serde(default)]
    pub boundary: Boundary,
}

/// Smallest lattice accepted by [`GridField::new`].
pub const MIN_SITES: usize = 5;

impl GridField {
    pub fn new(phi: Vec<f64>, phi_dot: Vec<f64>, dx: f64) -> Result<Self> {
        let f = GridField {
            phi,
            phi_dot,
            dx,
            boundary: Boundary::Periodic,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.phi.len();
        if n < MIN_SITES {
            return Err(Error::Usage(format!(
                "a grid field needs at least {MIN_SITES} sites, got {n}"
            )));
        }
        if self.phi_dot.len() != n {
            return Err(Error::dim("field velocities", n, self.phi_dot.len()));
        }
        if !(self.dx > 0.0 && self.dx.is_finite()) {
            return Err(Error::Usage(format!("grid spacing must be positive, got {}", self.dx)));
        }
        if self.phi.iter().chain(&self.phi_dot).any(|v| !v.is_finite()) {
            return Err(Error::non_finite("grid field", &self.state().concat()));
        }
        Ok(())
    }

    pub fn sites(&self) -> usize {
        self.phi.len()
    }

    pub fn state(&self) -> PhaseState {
        PhaseState {
            q: self.phi.clone(),
            q_dot: self.phi_dot.clone(),
        }
    }

    pub fn from_state(state: &PhaseState, dx: f64) -> Result<Self> {
        GridField::new(state.q.clone(), state.q_dot.clone(), dx)
    }

    /// The field shifted by `k` sites: site `i` of the result holds site
    /// `i − k` of `self`.
    pub fn rotated(&self, k: usize) -> Self {
        let n = self.sites();
        let mut g = self.clone();
        g.phi.rotate_right(k % n);
        g.phi_dot.rotate_right(k % n);
        g
    }
}

/// The sites entering each site's local density. Indices may fall one
/// period outside `0..n`; they are wrapped by the boundary rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StencilSet {
    pub sites: Vec<Vec<isize>>,
}

impl StencilSet {
    /// `{i − 1, i, i + 1}` at every site.
    pub fn nearest_neighbor(n: usize) -> Self {
        StencilSet {
            sites: (0..n as isize).map(|i| vec![i - 1, i, i + 1]).collect(),
        }
    }

    /// Stencil indices wrapped into `0..n`.
    pub fn resolve(&self, n: usize) -> Result<Vec<Vec<usize>>> {
        if self.sites.len() != n {
            return Err(Error::Usage(format!(
                "stencil set covers {} sites but the field has {n}",
                self.sites.len()
            )));
        }
        let ni = n as isize;
        self.sites
            .iter()
            .enumerate()
            .map(|(i, s)| {
                s.iter()
                    .map(|&j| {
                        if (-ni..2 * ni).contains(&j) {
                            Ok(j.rem_euclid(ni) as usize)
                        } else {
                            Err(Error::Usage(format!(
                                "stencil index {j} of site {i} is out of range for {n} sites"
                            )))
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

fn cyclic_distance(a: usize, b: usize, n: usize) -> usize {
    let d = a.abs_diff(b);
    d.min(n - d)
}

/// Largest cyclic distance between two members of one stencil, which bounds
/// the half-bandwidth of the field Hessian.
fn coupling_width(resolved: &[Vec<usize>], n: usize) -> usize {
    resolved
        .iter()
        .flat_map(|s| s.iter().flat_map(move |&a| s.iter().map(move |&b| cyclic_distance(a, b, n))))
        .max()
        .unwrap_or(0)
}

/// A local density: a scalar function of the field values and velocities on
/// one stencil, in stencil order.
pub trait SiteDensity {
    /// Stencil length the density expects.
    fn arity(&self) -> usize;

    fn eval<S: Real>(&self, phi: &[S], phi_dot: &[S], dx: f64) -> S;

    /// Value, gradient and Hessian over `(φ_stencil, φ̇_stencil)`.
    fn local_bundle(&self, phi: &[f64], phi_dot: &[f64], dx: f64) -> Result<DerivativeBundle> {
        let m = phi.len();
        let mut x = phi.to_vec();
        x.extend_from_slice(phi_dot);
        let jets = Jet2::variables(&x);
        let out = self.eval(&jets[..m], &jets[m..], dx);
        let b = DerivativeBundle::from_jet(&out, 2 * m);
        if !b.is_finite() {
            return Err(Error::non_finite("local density", &x));
        }
        Ok(b)
    }
}

impl<D: SiteDensity> SiteDensity for &D {
    fn arity(&self) -> usize {
        (**self).arity()
    }
    fn eval<S: Real>(&self, phi: &[S], phi_dot: &[S], dx: f64) -> S {
        (**self).eval(phi, phi_dot, dx)
    }
    fn local_bundle(&self, phi: &[f64], phi_dot: &[f64], dx: f64) -> Result<DerivativeBundle> {
        (**self).local_bundle(phi, phi_dot, dx)
    }
}

/// `𝓛_i = φ̇_i² − ((φ_{i+1} − φ_{i−1}) / 2Δx)²` on the stencil `{i−1, i, i+1}`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FdWaveDensity;

impl SiteDensity for FdWaveDensity {
    fn arity(&self) -> usize {
        3
    }

    fn eval<S: Real>(&self, phi: &[S], phi_dot: &[S], dx: f64) -> S {
        let slope = (phi[2].clone() - phi[0].clone()) / (2.0 * dx);
        phi_dot[1].square() - slope.square()
    }
}

fn check_arity(m: usize, resolved: &[Vec<usize>]) -> Result<()> {
    match resolved.iter().find(|s| s.len() != m) {
        Some(s) => Err(Error::Usage(format!(
            "density expects stencils of {m} sites, got one of {}",
            s.len()
        ))),
        None => Ok(()),
    }
}

fn gather<S: Clone>(values: &[S], stencil: &[usize]) -> Vec<S> {
    stencil.iter().map(|&j| values[j].clone()).collect()
}

fn sum_sites<S: Real, D: SiteDensity>(local: &D, phi: &[S], phi_dot: &[S], dx: f64, resolved: &[Vec<usize>]) -> S {
    let mut total = S::from_f64(0.0);
    for s in resolved {
        total = total + local.eval(&gather(phi, s), &gather(phi_dot, s), dx);
    }
    total
}

/// `Σ_i 𝓛_i` over field variables of any scalar type.
pub fn total_lagrangian_generic<S: Real, D: SiteDensity>(
    local: &D,
    phi: &[S],
    phi_dot: &[S],
    dx: f64,
    stencils: &StencilSet,
) -> Result<S> {
    let n = phi.len();
    if phi_dot.len() != n {
        return Err(Error::dim("field velocities", n, phi_dot.len()));
    }
    let resolved = stencils.resolve(n)?;
    check_arity(local.arity(), &resolved)?;
    Ok(sum_sites(local, phi, phi_dot, dx, &resolved))
}

/// `𝓛 = Σ_i 𝓛_i` at a field.
pub fn total_lagrangian<D: SiteDensity>(local: &D, field: &GridField, stencils: &StencilSet) -> Result<f64> {
    field.validate()?;
    total_lagrangian_generic(local, &field.phi, &field.phi_dot, field.dx, stencils)
}

/// The finite-difference wave density at site `i`.
pub fn fd_wave_density(field: &GridField, i: usize) -> Result<f64> {
    let n = field.sites();
    if i >= n {
        return Err(Error::Usage(format!("site {i} is out of range for {n} sites")));
    }
    let slope = (field.phi[(i + 1) % n] - field.phi[(i + n - 1) % n]) / (2.0 * field.dx);
    Ok(field.phi_dot[i] * field.phi_dot[i] - slope * slope)
}

/// The total Lagrangian of a density on a fixed lattice, as a
/// [`Lagrangian`] over `(φ, φ̇)`.
#[derive(Debug, Clone)]
pub struct GridLagrangian<D> {
    pub local: D,
    pub dx: f64,
    resolved: Vec<Vec<usize>>,
}

impl<D: SiteDensity> GridLagrangian<D> {
    pub fn new(local: D, n: usize, dx: f64, stencils: &StencilSet) -> Result<Self> {
        let resolved = stencils.resolve(n)?;
        check_arity(local.arity(), &resolved)?;
        Ok(GridLagrangian { local, dx, resolved })
    }

    pub fn sites(&self) -> usize {
        self.resolved.len()
    }
}

impl<D: SiteDensity> Lagrangian for GridLagrangian<D> {
    fn dof(&self) -> usize {
        self.resolved.len()
    }

    fn eval<S: Real>(&self, q: &[S], q_dot: &[S]) -> S {
        sum_sites(&self.local, q, q_dot, self.dx, &self.resolved)
    }
}

impl<D: SiteDensity> ScalarFn for GridLagrangian<D> {
    fn dim(&self) -> usize {
        2 * self.resolved.len()
    }

    fn call<S: Real>(&self, x: &[S]) -> S {
        let n = self.resolved.len();
        sum_sites(&self.local, &x[..n], &x[n..], self.dx, &self.resolved)
    }
}

/// Field accelerations and how they were obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldAccel {
    pub phi_ddot: Vec<f64>,
    /// The velocity Hessian was rank-deficient and pseudoinverted.
    pub degenerate: bool,
    /// The banded path handed over to the dense pseudoinverse.
    pub dense_fallback: bool,
}

/// Accelerations from the full `2n`-variable Hessian of the total
/// Lagrangian.
pub fn field_accel_dense<D: SiteDensity>(local: &D, field: &GridField, stencils: &StencilSet) -> Result<FieldAccel> {
    field.validate()?;
    let l = GridLagrangian::new(local, field.sites(), field.dx, stencils)?;
    let x = field.state().concat();
    let b = diffkit::bundle(&l, &x)?;
    let sol = ElSystem::from_bundle(&b).solve(&field.phi_dot);
    if !sol.accel.degenerate && sol.accel.q_ddot.iter().any(|a| !a.is_finite()) {
        return Err(Error::non_finite("field accel", &x));
    }
    Ok(FieldAccel {
        phi_ddot: sol.accel.q_ddot,
        degenerate: sol.accel.degenerate,
        dense_fallback: false,
    })
}

/// Velocity Hessian and right-hand side `∇_φ𝓛 − M φ̇` of the field system.
#[derive(Debug, Clone)]
struct Assembled {
    a: CyclicBanded,
    rhs: Vec<f64>,
}

/// Scatters local bundles into the banded field system. Bundle variables are
/// ordered `(φ_stencil, φ̇_stencil)`.
fn assemble(bundles: &[DerivativeBundle], resolved: &[Vec<usize>], phi_dot: &[f64], width: usize) -> Assembled {
    let n = resolved.len();
    let mut a = CyclicBanded::zeros(n, width);
    let mut rhs = vec![0.0; n];
    for (b, s) in bundles.iter().zip(resolved) {
        let m = s.len();
        for (r, &gi) in s.iter().enumerate() {
            rhs[gi] += b.gradient[r];
            for (c, &gj) in s.iter().enumerate() {
                rhs[gi] -= b.hessian[(m + r, c)] * phi_dot[gj];
                let inside = a.add(gi, gj, b.hessian[(m + r, m + c)]);
                debug_assert!(inside, "stencil coupling wider than the band");
            }
        }
    }
    Assembled { a, rhs }
}

/// A solved field system, able to apply the same inverse again.
enum FieldSolver {
    Banded(CyclicBanded),
    Dense(SymmetricPinv),
}

impl FieldSolver {
    fn apply(&self, b: &[f64]) -> Vec<f64> {
        match self {
            FieldSolver::Banded(a) => a.solve(b).map(|s| s.x).unwrap_or_else(|| vec![f64::NAN; b.len()]),
            FieldSolver::Dense(p) => p.apply(b),
        }
    }
}

/// Relative residual accepted from the banded solve before falling back.
const BANDED_RESIDUAL_TOL: f64 = 1e-9;

fn banded_attempt(sys: &Assembled) -> Option<Vec<f64>> {
    let sol = sys.a.solve(&sys.rhs)?;
    let (lo, hi) = sol.pivot_range;
    if !(hi > 0.0) || lo < PINV_RTOL * hi || sol.x.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let ax = sys.a.matvec(&sol.x);
    let scale = sys.a.max_abs() * sol.x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
        + sys.rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let resid = ax.iter().zip(&sys.rhs).fold(0.0f64, |m, (p, r)| m.max((p - r).abs()));
    (resid <= BANDED_RESIDUAL_TOL * scale.max(f64::MIN_POSITIVE)).then_some(sol.x)
}

fn solve_assembled(sys: &Assembled) -> (FieldAccel, FieldSolver) {
    if let Some(x) = banded_attempt(sys) {
        return (
            FieldAccel {
                phi_ddot: x,
                degenerate: false,
                dense_fallback: false,
            },
            FieldSolver::Banded(sys.a.clone()),
        );
    }
    dense_solve(&sys.a.to_dense(), &sys.rhs)
}

fn dense_solve(a: &Matrix, rhs: &[f64]) -> (FieldAccel, FieldSolver) {
    let pinv = SymmetricPinv::new(a);
    let x = pinv.apply(rhs);
    (
        FieldAccel {
            phi_ddot: x,
            degenerate: pinv.is_degenerate(),
            dense_fallback: true,
        },
        FieldSolver::Dense(pinv),
    )
}

/// Dense fallback for lattices too small for an unambiguous cyclic band.
fn dense_from_bundles(bundles: &[DerivativeBundle], resolved: &[Vec<usize>], phi_dot: &[f64]) -> (FieldAccel, FieldSolver) {
    let n = resolved.len();
    let mut a = Matrix::zeros(n, n);
    let mut rhs = vec![0.0; n];
    for (b, s) in bundles.iter().zip(resolved) {
        let m = s.len();
        for (r, &gi) in s.iter().enumerate() {
            rhs[gi] += b.gradient[r];
            for (c, &gj) in s.iter().enumerate() {
                rhs[gi] -= b.hessian[(m + r, c)] * phi_dot[gj];
                a[(gi, gj)] += b.hessian[(m + r, m + c)];
            }
        }
    }
    dense_solve(&a, &rhs)
}

fn solve_from_bundles(bundles: &[DerivativeBundle], resolved: &[Vec<usize>], phi_dot: &[f64]) -> (FieldAccel, FieldSolver) {
    let n = resolved.len();
    let width = coupling_width(resolved, n);
    if n > 2 * width {
        solve_assembled(&assemble(bundles, resolved, phi_dot, width))
    } else {
        dense_from_bundles(bundles, resolved, phi_dot)
    }
}

/// Accelerations from the banded field system, assembled site by site from
/// local Hessians. Agrees with [`field_accel_dense`]; when the banded
/// factorization is singular or inaccurate the dense pseudoinverse is used
/// and `dense_fallback` is set.
pub fn field_accel_banded<D: SiteDensity>(local: &D, field: &GridField, stencils: &StencilSet) -> Result<FieldAccel> {
    field.validate()?;
    let resolved = stencils.resolve(field.sites())?;
    check_arity(local.arity(), &resolved)?;
    let bundles = resolved
        .iter()
        .map(|s| local.local_bundle(&gather(&field.phi, s), &gather(&field.phi_dot, s), field.dx))
        .collect::<Result<Vec<_>>>()?;
    let (acc, _) = solve_from_bundles(&bundles, &resolved, &field.phi_dot);
    if !acc.degenerate && acc.phi_ddot.iter().any(|a| !a.is_finite()) {
        return Err(Error::non_finite("field accel", &field.state().concat()));
    }
    Ok(acc)
}

/// A per-site density given by a network over the stencil values
/// `(φ_stencil, φ̇_stencil)`, shared by all sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityNet {
    pub mlp: Mlp,
}

impl DensityNet {
    pub fn new(mlp: Mlp) -> Result<Self> {
        if mlp.config.input_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "a density network needs an even input dimension, got {}",
                mlp.config.input_dim
            )));
        }
        Ok(DensityNet { mlp })
    }

    pub fn arity(&self) -> usize {
        self.mlp.config.input_dim / 2
    }

    pub fn bind<'a>(&'a self, params: &'a [f64]) -> Result<BoundDensity<'a>> {
        if params.len() != self.mlp.param_count() {
            return Err(Error::dim("parameter vector", self.mlp.param_count(), params.len()));
        }
        Ok(BoundDensity { net: self, params })
    }

    /// Field accelerations through the banded path.
    pub fn predict(&self, params: &[f64], field: &GridField, stencils: &StencilSet) -> Result<FieldAccel> {
        field_accel_banded(&self.bind(params)?, field, stencils)
    }

    /// Records `‖φ̈_θ − φ̈_true‖₂` on a tape and returns reverse seeds.
    ///
    /// Each site's density is recorded as a jet over tape variables; the
    /// field solve enters through its adjoint `λ = A⁻¹ x̄` scattered back onto
    /// the local gradient and Hessian entries.
    pub fn record_accel_loss<'t>(
        &self,
        params: &[Var<'t>],
        field: &GridField,
        stencils: &StencilSet,
        target: &[f64],
    ) -> Result<diffkit::Recorded<'t>> {
        if params.len() != self.mlp.param_count() {
            return Err(Error::dim("parameter vector", self.mlp.param_count(), params.len()));
        }
        field.validate()?;
        let n = field.sites();
        if target.len() != n {
            return Err(Error::dim("target acceleration", n, target.len()));
        }
        let resolved = stencils.resolve(n)?;
        check_arity(self.arity(), &resolved)?;
        let m = self.arity();

        let mut jets = Vec::with_capacity(n);
        let mut bundles = Vec::with_capacity(n);
        for s in &resolved {
            let mut x = gather(&field.phi, s);
            x.extend(gather(&field.phi_dot, s));
            let out = self
                .mlp
                .forward_with::<Var<'t>, Jet2<Var<'t>>>(params, self.mlp.input_jets(&x));
            let values = Jet2 {
                value: out.value.value(),
                grad: out.grad.iter().map(|v| v.value()).collect(),
                hess: out.hess.iter().map(|v| v.value()).collect(),
            };
            let b = DerivativeBundle::from_jet(&values, 2 * m);
            if !b.is_finite() {
                return Err(Error::non_finite("local density", &x));
            }
            bundles.push(b);
            jets.push(out);
        }

        let (acc, solver) = solve_from_bundles(&bundles, &resolved, &field.phi_dot);
        let (loss, upstream) = crate::netcore::norm_loss(&acc.phi_ddot, target);
        let lambda = solver.apply(&upstream);
        let x = &acc.phi_ddot;
        let w = &field.phi_dot;

        let mut seeds = Vec::with_capacity(n * (m + m * m + m * (m + 1) / 2));
        for (out, s) in jets.iter().zip(&resolved) {
            if out.is_constant() {
                continue;
            }
            for (r, &gi) in s.iter().enumerate() {
                seeds.push((out.grad[r], lambda[gi]));
                for (c, &gj) in s.iter().enumerate() {
                    seeds.push((out.hess[packed_index(m + r, c)], -lambda[gi] * w[gj]));
                }
                for (c, &gj) in s.iter().enumerate().take(r + 1) {
                    let seed = if r == c {
                        -lambda[gi] * x[gi]
                    } else {
                        -(lambda[gi] * x[gj] + lambda[gj] * x[gi])
                    };
                    seeds.push((out.hess[packed_index(m + r, m + c)], seed));
                }
            }
        }
        Ok(diffkit::Recorded {
            loss,
            seeds,
            degenerate: acc.degenerate,
        })
    }
}

/// A density network bound to a parameter vector.
#[derive(Debug, Clone, Copy)]
pub struct BoundDensity<'a> {
    net: &'a DensityNet,
    params: &'a [f64],
}

impl SiteDensity for BoundDensity<'_> {
    fn arity(&self) -> usize {
        self.net.arity()
    }

    fn eval<S: Real>(&self, phi: &[S], phi_dot: &[S], _dx: f64) -> S {
        let mut x = phi.to_vec();
        x.extend_from_slice(phi_dot);
        let params: Vec<S> = self.params.iter().map(|&p| S::from_f64(p)).collect();
        let inputs = self.net.mlp.lift_inputs(&x);
        self.net.mlp.forward_with::<S, S>(&params, inputs)
    }

    fn local_bundle(&self, phi: &[f64], phi_dot: &[f64], _dx: f64) -> Result<DerivativeBundle> {
        let mut x = phi.to_vec();
        x.extend_from_slice(phi_dot);
        self.net.mlp.bundle_raw(self.params, &x)
    }
}
