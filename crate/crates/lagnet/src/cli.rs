//! Command-line flags. Every flag is optional here so that a config file
//! can supply it; required settings are enforced after merging.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "lagnet", version, about = "Learn and integrate Lagrangian dynamics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a trajectory dataset from a reference system.
    Gen(GenArgs),
    /// Train a network Lagrangian on a dataset.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset and measure energy drift of rollouts.
    Eval(EvalArgs),
    /// Integrate a learned or analytic Lagrangian from an initial state.
    Rollout(RolloutArgs),
    /// Lattice accelerations through the banded solver, checked against dense.
    FieldAccel(FieldAccelArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Two hidden layers of 64 softplus units.
    Desk,
    /// Four hidden layers of 500 softplus units.
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelChoice {
    Lagrangian,
    #[value(name = "lattice_density")]
    LatticeDensity,
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    /// TOML or JSON file with settings; flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub system: Option<String>,
    /// Number of trajectories.
    #[arg(long)]
    pub count: Option<usize>,
    /// RK4 steps per trajectory.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Lattice sites (wave1d only).
    #[arg(long)]
    pub sites: Option<usize>,
    /// Lattice spacing (wave1d only).
    #[arg(long)]
    pub dx: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Dataset directory or CSV file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long, value_enum)]
    pub model: Option<ModelChoice>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_initial: Option<f64>,
    #[arg(long)]
    pub lr_decay: Option<f64>,
    /// Fraction of trajectories used for training.
    #[arg(long)]
    pub split: Option<f64>,
    /// Standardize network inputs with training-set statistics.
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub standardize: bool,
    /// Lattice spacing for lattice_density models when the dataset has no
    /// sidecar.
    #[arg(long)]
    pub dx: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Steps of each learned rollout used for energy drift.
    #[arg(long)]
    pub rollout_steps: Option<usize>,
    /// Rollout timestep; defaults to the dataset's.
    #[arg(long)]
    pub dt: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct RolloutArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long, conflicts_with = "analytic")]
    pub checkpoint: Option<PathBuf>,
    /// Reference system to integrate instead of a checkpoint.
    #[arg(long)]
    pub analytic: Option<String>,
    /// Comma-separated `q…,q̇…`.
    #[arg(long, allow_hyphen_values = true)]
    pub init: Option<String>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Output CSV file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Lattice sites for `--analytic wave1d`.
    #[arg(long)]
    pub sites: Option<usize>,
    /// Lattice spacing for `--analytic wave1d`.
    #[arg(long)]
    pub dx: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct FieldAccelArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Field snapshot CSV; a random field is drawn when absent.
    #[arg(long)]
    pub field: Option<PathBuf>,
    /// Lattice density checkpoint; the finite-difference wave density is
    /// used when absent.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub sites: Option<usize>,
    #[arg(long)]
    pub dx: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Largest lattice also solved densely for comparison.
    #[arg(long)]
    pub dense_limit: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
