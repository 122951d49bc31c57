//! Reference physical systems with analytic Lagrangians and closed-form
//! accelerations, classical RK4, and seeded trajectory generation.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::diffkit::Real;
use crate::eldyn::{self, Lagrangian, PhaseState};
use crate::gridlag::{self, FdWaveDensity, StencilSet};
use crate::rng::{child_seed, SeededRng};
use crate::{Error, Result};

/// Names accepted by [`ReferenceSystem::by_name`].
pub const SYSTEM_NAMES: [&str; 5] = [
    "free_particle",
    "harmonic",
    "pendulum",
    "double_pendulum",
    "wave1d",
];

/// A system with a known Lagrangian and equations of motion. Physical
/// constants default to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ReferenceSystem {
    /// `L = ½ m ‖q̇‖²`.
    FreeParticle { dim: usize, mass: f64 },
    /// `L = ½ m q̇² − ½ k q²`.
    Harmonic { mass: f64, stiffness: f64 },
    /// `L = ½ m l² θ̇² + m g l cos θ`.
    Pendulum { mass: f64, length: f64, gravity: f64 },
    /// Two point masses on rigid massless rods, angles from the vertical.
    DoublePendulum {
        mass1: f64,
        mass2: f64,
        length1: f64,
        length2: f64,
        gravity: f64,
    },
    /// Periodic lattice with the finite-difference wave density
    /// `φ̇_i² − ((φ_{i+1} − φ_{i−1}) / 2Δx)²` at every site.
    Wave1d { sites: usize, dx: f64 },
}

/// Uniform sampling box for initial states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerRanges {
    pub q: (f64, f64),
    pub q_dot: (f64, f64),
}

impl ReferenceSystem {
    pub fn by_name(name: &str) -> Result<Self> {
        Ok(match name {
            "free_particle" => ReferenceSystem::FreeParticle { dim: 2, mass: 1.0 },
            "harmonic" => ReferenceSystem::Harmonic {
                mass: 1.0,
                stiffness: 1.0,
            },
            "pendulum" => ReferenceSystem::Pendulum {
                mass: 1.0,
                length: 1.0,
                gravity: 1.0,
            },
            "double_pendulum" => ReferenceSystem::DoublePendulum {
                mass1: 1.0,
                mass2: 1.0,
                length1: 1.0,
                length2: 1.0,
                gravity: 1.0,
            },
            "wave1d" => ReferenceSystem::Wave1d { sites: 16, dx: 1.0 },
            other => {
                return Err(Error::Usage(format!(
                    "unknown system `{other}`; valid systems: {}",
                    SYSTEM_NAMES.join(", ")
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ReferenceSystem::FreeParticle { .. } => "free_particle",
            ReferenceSystem::Harmonic { .. } => "harmonic",
            ReferenceSystem::Pendulum { .. } => "pendulum",
            ReferenceSystem::DoublePendulum { .. } => "double_pendulum",
            ReferenceSystem::Wave1d { .. } => "wave1d",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ReferenceSystem::FreeParticle { dim, .. } => *dim,
            ReferenceSystem::Harmonic { .. } | ReferenceSystem::Pendulum { .. } => 1,
            ReferenceSystem::DoublePendulum { .. } => 2,
            ReferenceSystem::Wave1d { sites, .. } => *sites,
        }
    }

    /// Default initial-state sampling box.
    pub fn sampler(&self) -> SamplerRanges {
        use core::f64::consts::{FRAC_PI_2, PI};
        match self {
            ReferenceSystem::Pendulum { .. } => SamplerRanges {
                q: (-PI, PI),
                q_dot: (-1.0, 1.0),
            },
            ReferenceSystem::DoublePendulum { .. } => SamplerRanges {
                q: (-FRAC_PI_2, FRAC_PI_2),
                q_dot: (-0.5, 0.5),
            },
            _ => SamplerRanges {
                q: (-1.0, 1.0),
                q_dot: (-1.0, 1.0),
            },
        }
    }

    pub fn sample_state(&self, rng: &mut SeededRng) -> PhaseState {
        let r = self.sampler();
        let d = self.dim();
        let q = (0..d).map(|_| rng.uniform(r.q.0, r.q.1)).collect();
        let q_dot = (0..d).map(|_| rng.uniform(r.q_dot.0, r.q_dot.1)).collect();
        PhaseState { q, q_dot }
    }

    /// Closed-form accelerations.
    pub fn true_accel(&self, state: &PhaseState) -> Result<Vec<f64>> {
        if state.dof() != self.dim() {
            return Err(Error::dim("phase state", self.dim(), state.dof()));
        }
        let q = &state.q;
        let w = &state.q_dot;
        Ok(match *self {
            ReferenceSystem::FreeParticle { dim, .. } => vec![0.0; dim],
            ReferenceSystem::Harmonic { mass, stiffness } => vec![-stiffness / mass * q[0]],
            ReferenceSystem::Pendulum { length, gravity, .. } => {
                vec![-gravity / length * libm::sin(q[0])]
            }
            ReferenceSystem::DoublePendulum {
                mass1: m1,
                mass2: m2,
                length1: l1,
                length2: l2,
                gravity: g,
            } => {
                let delta = q[0] - q[1];
                let (sd, cd) = (libm::sin(delta), libm::cos(delta));
                let den = 2.0 * m1 + m2 - m2 * libm::cos(2.0 * delta);
                let a1 = (-g * (2.0 * m1 + m2) * libm::sin(q[0])
                    - m2 * g * libm::sin(q[0] - 2.0 * q[1])
                    - 2.0 * sd * m2 * (w[1] * w[1] * l2 + w[0] * w[0] * l1 * cd))
                    / (l1 * den);
                let a2 = 2.0
                    * sd
                    * (w[0] * w[0] * l1 * (m1 + m2)
                        + g * (m1 + m2) * libm::cos(q[0])
                        + w[1] * w[1] * l2 * m2 * cd)
                    / (l2 * den);
                vec![a1, a2]
            }
            ReferenceSystem::Wave1d { sites: n, dx } => (0..n)
                .map(|i| {
                    (q[(i + 2) % n] - 2.0 * q[i] + q[(i + n - 2) % n]) / (4.0 * dx * dx)
                })
                .collect(),
        })
    }
}

impl Lagrangian for ReferenceSystem {
    fn dof(&self) -> usize {
        self.dim()
    }

    fn eval<S: Real>(&self, q: &[S], w: &[S]) -> S {
        match *self {
            ReferenceSystem::FreeParticle { mass, .. } => S::dot(w, w) * (0.5 * mass),
            ReferenceSystem::Harmonic { mass, stiffness } => {
                w[0].square() * (0.5 * mass) - q[0].square() * (0.5 * stiffness)
            }
            ReferenceSystem::Pendulum {
                mass,
                length,
                gravity,
            } => w[0].square() * (0.5 * mass * length * length) + q[0].cos() * (mass * gravity * length),
            ReferenceSystem::DoublePendulum {
                mass1: m1,
                mass2: m2,
                length1: l1,
                length2: l2,
                gravity: g,
            } => {
                let kinetic = w[0].square() * (0.5 * (m1 + m2) * l1 * l1)
                    + w[1].square() * (0.5 * m2 * l2 * l2)
                    + w[0].clone() * w[1].clone() * (q[0].clone() - q[1].clone()).cos() * (m2 * l1 * l2);
                let potential_neg = q[0].cos() * ((m1 + m2) * g * l1) + q[1].cos() * (m2 * g * l2);
                kinetic + potential_neg
            }
            ReferenceSystem::Wave1d { sites, dx } => {
                let stencils = StencilSet::nearest_neighbor(sites);
                gridlag::total_lagrangian_generic(&FdWaveDensity, q, w, dx, &stencils)
                    .expect("default stencils are in range")
            }
        }
    }
}

/// A uniformly sampled path with its accelerations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub system: String,
    pub seed: u64,
    pub h: f64,
    pub times: Vec<f64>,
    pub states: Vec<PhaseState>,
    pub accels: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dof(&self) -> usize {
        self.states.first().map_or(0, PhaseState::dof)
    }
}

fn axpy(a: &[f64], h: f64, b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + h * y).collect()
}

fn rk4_with_first_stage<F>(accel_fn: &mut F, state: &PhaseState, a1: &[f64], h: f64) -> Result<PhaseState>
where
    F: FnMut(&PhaseState) -> Result<Vec<f64>>,
{
    let q = &state.q;
    let v1 = &state.q_dot;
    let half = 0.5 * h;

    let v2 = axpy(v1, half, a1);
    let s2 = PhaseState {
        q: axpy(q, half, v1),
        q_dot: v2.clone(),
    };
    let a2 = accel_fn(&s2)?;

    let v3 = axpy(v1, half, &a2);
    let s3 = PhaseState {
        q: axpy(q, half, &v2),
        q_dot: v3.clone(),
    };
    let a3 = accel_fn(&s3)?;

    let v4 = axpy(v1, h, &a3);
    let s4 = PhaseState {
        q: axpy(q, h, &v3),
        q_dot: v4.clone(),
    };
    let a4 = accel_fn(&s4)?;

    let h6 = h / 6.0;
    let d = q.len();
    let next = PhaseState {
        q: (0..d)
            .map(|i| q[i] + h6 * (v1[i] + 2.0 * v2[i] + 2.0 * v3[i] + v4[i]))
            .collect(),
        q_dot: (0..d)
            .map(|i| v1[i] + h6 * (a1[i] + 2.0 * a2[i] + 2.0 * a3[i] + a4[i]))
            .collect(),
    };
    if !next.is_finite() {
        return Err(Error::non_finite("rk4 step", &state.concat()));
    }
    Ok(next)
}

/// One classical RK4 step of `(q, q̇)' = (q̇, accel(q, q̇))`.
pub fn rk4_step<F>(mut accel_fn: F, state: &PhaseState, h: f64) -> Result<PhaseState>
where
    F: FnMut(&PhaseState) -> Result<Vec<f64>>,
{
    let a1 = accel_fn(state)?;
    rk4_with_first_stage(&mut accel_fn, state, &a1, h)
}

/// Integrates `steps` RK4 steps and records the acceleration at every
/// sample. On failure returns the index of the last finite sample.
fn integrate<F>(mut accel_fn: F, initial: &PhaseState, h: f64, steps: usize) -> core::result::Result<(Vec<PhaseState>, Vec<Vec<f64>>), usize>
where
    F: FnMut(&PhaseState) -> Result<Vec<f64>>,
{
    let mut states = Vec::with_capacity(steps + 1);
    let mut accels = Vec::with_capacity(steps + 1);
    let mut state = initial.clone();
    for k in 0..=steps {
        let a = match accel_fn(&state) {
            Ok(a) if a.iter().all(|v| v.is_finite()) => a,
            _ => return Err(k.saturating_sub(1)),
        };
        if k == steps {
            states.push(state);
            accels.push(a);
            break;
        }
        let next = rk4_with_first_stage(&mut accel_fn, &state, &a, h).map_err(|_| k)?;
        states.push(state);
        accels.push(a);
        state = next;
    }
    Ok((states, accels))
}

fn times(h: f64, steps: usize) -> Vec<f64> {
    (0..=steps).map(|k| k as f64 * h).collect()
}

/// `count` seeded trajectories of `steps` RK4 steps each, integrated with
/// the closed-form accelerations. Trajectory `k` draws its initial state
/// from the stream seeded by [`child_seed`]`(seed, k)`.
pub fn generate_trajectories(
    system: &ReferenceSystem,
    count: usize,
    h: f64,
    steps: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Usage(format!("timestep must be positive, got {h}")));
    }
    if steps < 2 {
        return Err(Error::Usage(format!("need at least 2 steps, got {steps}")));
    }
    (0..count)
        .map(|k| {
            let traj_seed = child_seed(seed, k as u64);
            let mut rng = SeededRng::new(traj_seed);
            let initial = system.sample_state(&mut rng);
            let (states, accels) = integrate(|s| system.true_accel(s), &initial, h, steps)
                .map_err(|step| Error::Generation { index: k, step })?;
            Ok(Trajectory {
                system: system.name().to_string(),
                seed: traj_seed,
                h,
                times: times(h, steps),
                states,
                accels,
            })
        })
        .collect()
}

/// A trajectory under an arbitrary Lagrangian.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub trajectory: Trajectory,
    /// Acceleration evaluations (including RK4 stages) that hit a degenerate
    /// velocity Hessian.
    pub degenerate_events: usize,
}

/// Integrates the Euler-Lagrange accelerations of `l` from `initial`.
pub fn rollout<L: Lagrangian + ?Sized>(
    l: &L,
    initial: &PhaseState,
    h: f64,
    steps: usize,
) -> Result<Rollout> {
    if l.dof() != initial.dof() {
        return Err(Error::dim("initial state", l.dof(), initial.dof()));
    }
    let mut degenerate_events = 0;
    let (states, accels) = integrate(
        |s| {
            let a = eldyn::accel(l, s)?;
            degenerate_events += a.degenerate as usize;
            Ok(a.q_ddot)
        },
        initial,
        h,
        steps,
    )
    .map_err(|last_finite| Error::Rollout { last_finite })?;
    Ok(Rollout {
        trajectory: Trajectory {
            system: "rollout".to_string(),
            seed: 0,
            h,
            times: times(h, steps),
            states,
            accels,
        },
        degenerate_events,
    })
}
