#![allow(dead_code)]

use lagnet_core::eldyn::PhaseState;
use lagnet_core::rng::SeededRng;

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Double pendulum accelerations from the Euler-Lagrange equations written
/// out by hand and solved as a 2×2 linear system by Cramer's rule:
///
///   (m1+m2) l1² θ1'' + m2 l1 l2 cosΔ θ2'' = −m2 l1 l2 ω2² sinΔ − (m1+m2) g l1 sinθ1
///   m2 l1 l2 cosΔ θ1'' + m2 l2² θ2''      =  m2 l1 l2 ω1² sinΔ − m2 g l2 sinθ2
///
/// with Δ = θ1 − θ2.
pub fn double_pendulum_oracle(m1: f64, m2: f64, l1: f64, l2: f64, g: f64, s: &PhaseState) -> [f64; 2] {
    let (t1, t2) = (s.q[0], s.q[1]);
    let (w1, w2) = (s.q_dot[0], s.q_dot[1]);
    let d = t1 - t2;
    let a11 = (m1 + m2) * l1 * l1;
    let a12 = m2 * l1 * l2 * d.cos();
    let a22 = m2 * l2 * l2;
    let b1 = -m2 * l1 * l2 * w2 * w2 * d.sin() - (m1 + m2) * g * l1 * t1.sin();
    let b2 = m2 * l1 * l2 * w1 * w1 * d.sin() - m2 * g * l2 * t2.sin();
    let det = a11 * a22 - a12 * a12;
    [(b1 * a22 - a12 * b2) / det, (a11 * b2 - a12 * b1) / det]
}

/// Exact harmonic oscillator (unit mass and stiffness) state at time `t`.
pub fn harmonic_exact(q0: f64, v0: f64, t: f64) -> PhaseState {
    PhaseState {
        q: vec![q0 * t.cos() + v0 * t.sin()],
        q_dot: vec![-q0 * t.sin() + v0 * t.cos()],
    }
}

/// The periodic lattice acceleration derived by hand from the density
/// `φ̇_i² − ((φ_{i+1} − φ_{i−1}) / 2Δx)²`:
/// `φ̈_i = (φ_{i+2} − 2φ_i + φ_{i−2}) / 4Δx²`.
pub fn wave_eom(phi: &[f64], dx: f64) -> Vec<f64> {
    let n = phi.len();
    (0..n)
        .map(|i| (phi[(i + 2) % n] - 2.0 * phi[i] + phi[(i + n - 2) % n]) / (4.0 * dx * dx))
        .collect()
}

pub fn uniform_vec(rng: &mut SeededRng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(lo, hi)).collect()
}
