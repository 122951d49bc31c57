//! Learned Lagrangian dynamics.
//!
//! A scalar Lagrangian `L(q, q̇)`, either analytic or a neural network, is
//! turned into accelerations by solving the Euler-Lagrange equations
//!
//! ```text
//! q̈ = (∇_q̇ ∇_q̇ᵀ L)⁺ [∇_q L − (∇_q ∇_q̇ᵀ L) q̇]
//! ```
//!
//! and a network Lagrangian is trained by matching those accelerations to
//! observed ones. The crate is `no_std` with `alloc`; file formats and the
//! command-line front end live in the `lagnet` crate.
//!
//! Modules:
//!
//! * [`diffkit`]: forward second-order jets and a reverse-mode tape.
//! * [`netcore`]: the multilayer perceptron Lagrangian and its parameters.
//! * [`eldyn`]: acceleration solve, canonical momentum, energy, residuals.
//! * [`gridlag`]: lattice Lagrangian densities with dense and banded solves.
//! * [`refsys`]: analytic reference systems, RK4 and trajectory generation.
//! * [`trainer`]: loss, Adam and the minibatch training loop.
#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod diffkit;
pub mod eldyn;
mod error;
pub mod gridlag;
pub mod linalg;
pub mod netcore;
pub mod refsys;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};

pub use diffkit::{DerivativeBundle, Real};
pub use eldyn::{AccelResult, Lagrangian, PhaseState};
pub use netcore::{Activation, Mlp, NetworkConfig, ParameterSet};
pub use refsys::{ReferenceSystem, Trajectory};
