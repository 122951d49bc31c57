use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use lagnet_core::gridlag::{field_accel_banded, field_accel_dense, FdWaveDensity, GridField, SiteDensity, StencilSet};
use lagnet_core::refsys::{generate_trajectories, Trajectory};
use lagnet_core::rng::SeededRng;
use lagnet_core::trainer::{self, Dataset, EpochRecord, TrainConfig, TrainReport};
use lagnet_core::{Mlp, NetworkConfig, PhaseState, ReferenceSystem};
use serde::{Deserialize, Serialize};

use crate::cli::{EvalArgs, FieldAccelArgs, GenArgs, ModelChoice, Preset, RolloutArgs, TrainArgs};
use crate::config::{resolve, sibling_config_path, RESOLVED_CONFIG_FILE};
use crate::error::{CliError, CliResult};
use crate::formats::{
    dataset_csv, fmt_f64, load_dataset, load_field, save_field, write_atomic, write_json, Checkpoint, DatasetMeta,
    ErasedLagrangian, Model, ModelKind, DATASET_FILE, DATASET_META_FILE, FORMAT_VERSION,
};

fn system_with_lattice(name: &str, sites: Option<usize>, dx: Option<f64>) -> CliResult<ReferenceSystem> {
    let mut sys = ReferenceSystem::by_name(name)?;
    match &mut sys {
        ReferenceSystem::Wave1d { sites: n, dx: h } => {
            *n = sites.unwrap_or(*n);
            *h = dx.unwrap_or(*h);
            GridField::new(vec![0.0; *n], vec![0.0; *n], *h)?;
        }
        _ if sites.is_some() || dx.is_some() => {
            return Err(CliError::usage("--sites and --dx apply only to wave1d"));
        }
        _ => {}
    }
    Ok(sys)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub system: String,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub seed: u64,
    pub out: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sites: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dx: Option<f64>,
}

fn default_count() -> usize {
    100
}

fn default_steps() -> usize {
    100
}

fn default_dt() -> f64 {
    0.01
}

pub fn gen(args: GenArgs) -> CliResult<()> {
    let cfg: GenConfig = resolve(args.config.as_deref(), &args)?;
    let sys = system_with_lattice(&cfg.system, cfg.sites, cfg.dx)?;
    if cfg.count == 0 {
        return Err(CliError::usage("--count must be at least 1"));
    }
    let trajs = generate_trajectories(&sys, cfg.count, cfg.dt, cfg.steps, cfg.seed)?;
    write_atomic(&cfg.out.join(DATASET_FILE), dataset_csv(&trajs).as_bytes())?;
    let meta = DatasetMeta {
        format_version: FORMAT_VERSION,
        system: sys.name().to_string(),
        d: sys.dim(),
        h: cfg.dt,
        steps: cfg.steps,
        count: cfg.count,
        seed: cfg.seed,
        sampler: sys.sampler(),
        constants: sys,
    };
    write_json(&cfg.out.join(DATASET_META_FILE), &meta)?;
    write_json(&cfg.out.join(RESOLVED_CONFIG_FILE), &cfg)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainCmdConfig {
    pub data: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    #[serde(default = "default_preset")]
    pub preset: Preset,
    #[serde(default = "default_model")]
    pub model: ModelChoice,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr_initial")]
    pub lr_initial: f64,
    #[serde(default = "default_lr_decay")]
    pub lr_decay: f64,
    #[serde(default = "default_split")]
    pub split: f64,
    #[serde(default)]
    pub standardize: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dx: Option<f64>,
}

fn default_preset() -> Preset {
    Preset::Desk
}

fn default_model() -> ModelChoice {
    ModelChoice::Lagrangian
}

fn default_epochs() -> usize {
    TrainConfig::default().epochs
}

fn default_batch_size() -> usize {
    TrainConfig::default().batch_size
}

fn default_lr_initial() -> f64 {
    TrainConfig::default().lr_initial
}

fn default_lr_decay() -> f64 {
    TrainConfig::default().lr_decay
}

fn default_split() -> f64 {
    TrainConfig::default().split
}

impl TrainCmdConfig {
    fn trainer_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            lr_initial: self.lr_initial,
            lr_decay: self.lr_decay,
            epochs: self.epochs,
            seed: self.seed,
            split: self.split,
            standardize: self.standardize,
            ..TrainConfig::default()
        }
    }
}

fn network_config(preset: Preset, input_dim: usize, seed: u64) -> NetworkConfig {
    match preset {
        Preset::Desk => NetworkConfig::desk(input_dim, seed),
        Preset::Paper => NetworkConfig::paper(input_dim, seed),
    }
}

#[derive(Serialize)]
struct TrainOutput<'a> {
    model: &'a ModelKind,
    preset: Preset,
    system: &'a str,
    train_samples: usize,
    val_samples: usize,
    #[serde(flatten)]
    report: &'a TrainReport,
}

fn loss_curve_csv(rows: &[(usize, f64, f64)]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for (e, tr, va) in rows {
        writeln!(out, "{e},{},{}", fmt_f64(*tr), fmt_f64(*va)).unwrap();
    }
    out
}

pub fn train(args: TrainArgs) -> CliResult<()> {
    let cfg: TrainCmdConfig = resolve(args.config.as_deref(), &args)?;
    let tcfg = cfg.trainer_config();
    tcfg.validate()?;
    let data = load_dataset(&cfg.data)?;
    let d = data.dof();
    let (train_set, val_set) = Dataset::split_trajectories(&data.trajectories, tcfg.split, tcfg.seed)?;

    let kind = match cfg.model {
        ModelChoice::Lagrangian => ModelKind::Lagrangian,
        ModelChoice::LatticeDensity => {
            let meta_dx = match data.meta.as_ref().map(|m| &m.constants) {
                Some(ReferenceSystem::Wave1d { dx, .. }) => Some(*dx),
                _ => None,
            };
            ModelKind::LatticeDensity {
                sites: d,
                dx: cfg.dx.or(meta_dx).unwrap_or(1.0),
            }
        }
    };
    let input_dim = match kind {
        ModelKind::Lagrangian => 2 * d,
        ModelKind::LatticeDensity { .. } => 2 * StencilSet::nearest_neighbor(d).sites[0].len(),
    };
    let mut mlp = Mlp::new(network_config(cfg.preset, input_dim, cfg.seed))?;
    if tcfg.standardize {
        if kind != ModelKind::Lagrangian {
            return Err(CliError::usage("--standardize is only supported for lagrangian models"));
        }
        mlp = trainer::fit_standardization(mlp, &train_set)?;
    }
    let model = Model::build(&kind, mlp.clone())?;
    let init = mlp.init().into_flat();

    std::fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))?;
    write_json(&cfg.out.join(RESOLVED_CONFIG_FILE), &cfg)?;
    let ckpt_path = cfg.out.join("checkpoint.json");
    let mut ckpt = Checkpoint {
        format_version: FORMAT_VERSION,
        model: kind.clone(),
        network: mlp,
        flat_parameters: init.clone(),
        seed: cfg.seed,
        system: data.meta.as_ref().map(|m| m.system.clone()),
        epoch: 0,
    };
    ckpt.save(&ckpt_path)?;

    let mut curve: Vec<(usize, f64, f64)> = Vec::new();
    let mut write_error: Option<CliError> = None;
    let mut observer = |r: &EpochRecord<'_>| -> lagnet_core::Result<()> {
        curve.push((r.epoch, r.train_loss, r.val_loss));
        ckpt.flat_parameters = r.params.to_vec();
        ckpt.epoch = r.epoch;
        if let Err(e) = ckpt.save(&ckpt_path) {
            write_error = Some(e);
            return Err(lagnet_core::Error::Usage("checkpoint write failed".into()));
        }
        eprintln!(
            "epoch {:>4}  train {:.6e}  val {:.6e}  lr {:.3e}",
            r.epoch, r.train_loss, r.val_loss, r.lr
        );
        Ok(())
    };
    let result = trainer::train(model.dynamics(), init, &train_set, &val_set, &tcfg, &mut observer);
    if let Some(e) = write_error {
        return Err(e);
    }
    write_atomic(&cfg.out.join("loss_curve.csv"), loss_curve_csv(&curve).as_bytes())?;
    let report = result?;
    write_json(
        &cfg.out.join("report.json"),
        &TrainOutput {
            model: &kind,
            preset: cfg.preset,
            system: data.system_name(),
            train_samples: train_set.len(),
            val_samples: val_set.len(),
            report: &report,
        },
    )?;
    eprintln!(
        "validation loss {:.6e} -> {:.6e} in {} steps",
        report.initial_val_loss,
        report.val_loss.last().copied().unwrap_or(report.initial_val_loss),
        report.steps
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub out: PathBuf,
    #[serde(default = "default_rollout_steps")]
    pub rollout_steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
}

fn default_rollout_steps() -> usize {
    100
}

#[derive(Debug, Serialize)]
struct TrajectoryMetrics {
    traj: usize,
    samples: usize,
    mean_loss: f64,
    /// `max_k |H_k − H_0|`; absent when the rollout blew up.
    energy_drift_abs: Option<f64>,
    /// `max_k |H_k − H_0| / |H_0|`; zero when `H` is exactly constant,
    /// absent when `H_0 = 0` otherwise.
    energy_drift: Option<f64>,
    degenerate_events: usize,
}

#[derive(Debug, Serialize)]
struct DriftSummary {
    mean: Option<f64>,
    median: Option<f64>,
    max: Option<f64>,
    measured: usize,
    failed_rollouts: usize,
    degenerate_events: usize,
}

#[derive(Debug, Serialize)]
struct EvalMetrics {
    format_version: u32,
    system: String,
    samples: usize,
    trajectories: usize,
    mean_loss: f64,
    rollout_steps: usize,
    dt: f64,
    energy_drift: DriftSummary,
    per_trajectory: Vec<TrajectoryMetrics>,
}

/// Relative and absolute energy drift along a rollout.
pub fn energy_drift(energies: &[f64]) -> (f64, Option<f64>) {
    let h0 = energies[0];
    let abs = energies.iter().map(|h| (h - h0).abs()).fold(0.0, f64::max);
    let rel = if abs == 0.0 {
        Some(0.0)
    } else if h0 != 0.0 {
        Some(abs / h0.abs())
    } else {
        None
    };
    (abs, rel)
}

fn measure_drift(l: &dyn ErasedLagrangian, tr: &Trajectory, h: f64, steps: usize) -> Option<(f64, Option<f64>, usize)> {
    let run = l.rollout(&tr.states[0], h, steps).ok()?;
    let energies: Option<Vec<f64>> = run.trajectory.states.iter().map(|s| l.energy(s).ok()).collect();
    let energies = energies.filter(|e| e.iter().all(|v| v.is_finite()))?;
    let (abs, rel) = energy_drift(&energies);
    Some((abs, rel, run.degenerate_events))
}

fn summarize(values: &[f64], failed: usize, degenerate_events: usize) -> DriftSummary {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2]),
        _ => Some(0.5 * (sorted[n / 2 - 1] + sorted[n / 2])),
    };
    DriftSummary {
        mean: (n > 0).then(|| sorted.iter().sum::<f64>() / n as f64),
        median,
        max: sorted.last().copied(),
        measured: n,
        failed_rollouts: failed,
        degenerate_events,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn eval(args: EvalArgs) -> CliResult<()> {
    let cfg: EvalConfig = resolve(args.config.as_deref(), &args)?;
    let ckpt = Checkpoint::load(&cfg.checkpoint)?;
    let model = ckpt.model()?;
    let data = load_dataset(&cfg.data)?;
    if model.dof() != data.dof() {
        return Err(CliError::usage(format!(
            "checkpoint expects {} coordinates but the dataset has {}",
            model.dof(),
            data.dof()
        )));
    }
    let params = &ckpt.flat_parameters;
    let dyn_model = model.dynamics();
    let all = Dataset::from_trajectories(&data.trajectories);
    let mean_loss = trainer::evaluate(dyn_model, params, &all)?;

    let dt = cfg.dt.or(data.meta.as_ref().map(|m| m.h)).unwrap_or(data.trajectories[0].h);
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(CliError::usage(format!("rollout timestep must be positive, got {dt}; pass --dt")));
    }
    let per_traj = model.with_lagrangian(params, |l| -> CliResult<Vec<TrajectoryMetrics>> {
        data.trajectories
            .iter()
            .enumerate()
            .map(|(k, tr)| {
                let set = Dataset::from_trajectories([tr]);
                let loss = trainer::evaluate(dyn_model, params, &set)?;
                let drift = measure_drift(l, tr, dt, cfg.rollout_steps);
                Ok(TrajectoryMetrics {
                    traj: k,
                    samples: set.len(),
                    mean_loss: loss,
                    energy_drift_abs: drift.map(|d| d.0),
                    energy_drift: drift.and_then(|d| d.1),
                    degenerate_events: drift.map_or(0, |d| d.2),
                })
            })
            .collect()
    })??;

    let rel: Vec<f64> = per_traj.iter().filter_map(|m| m.energy_drift).collect();
    let failed = per_traj.iter().filter(|m| m.energy_drift_abs.is_none()).count();
    let degenerate: usize = per_traj.iter().map(|m| m.degenerate_events).sum();
    let metrics = EvalMetrics {
        format_version: FORMAT_VERSION,
        system: data.system_name().to_string(),
        samples: all.len(),
        trajectories: per_traj.len(),
        mean_loss,
        rollout_steps: cfg.rollout_steps,
        dt,
        energy_drift: summarize(&rel, failed, degenerate),
        per_trajectory: per_traj,
    };

    let mut csv = String::from("traj,samples,mean_loss,energy_drift_abs,energy_drift\n");
    for m in &metrics.per_trajectory {
        writeln!(
            csv,
            "{},{},{},{},{}",
            m.traj,
            m.samples,
            fmt_f64(m.mean_loss),
            opt(m.energy_drift_abs),
            opt(m.energy_drift)
        )
        .unwrap();
    }
    write_json(&cfg.out.join("metrics.json"), &metrics)?;
    write_atomic(&cfg.out.join("metrics.csv"), csv.as_bytes())?;
    write_json(&cfg.out.join(RESOLVED_CONFIG_FILE), &cfg)?;
    if degenerate > 0 {
        eprintln!("{degenerate} degenerate acceleration evaluations during rollouts");
    }
    eprintln!("mean loss {mean_loss:.6e} over {} samples", metrics.samples);
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analytic: Option<String>,
    pub init: String,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    pub out: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sites: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dx: Option<f64>,
}

/// Parses `q…,q̇…` into a state of `d` coordinates.
pub fn parse_init(text: &str, d: usize) -> CliResult<PhaseState> {
    let vals = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::usage(format!("--init: `{}` is not a number", s.trim())))
        })
        .collect::<CliResult<Vec<f64>>>()?;
    if vals.len() != 2 * d {
        return Err(CliError::usage(format!(
            "--init needs {} values (q then q̇ for {d} coordinates), got {}",
            2 * d,
            vals.len()
        )));
    }
    PhaseState::from_concat(&vals).map_err(|e| CliError::usage(format!("--init: {e}")))
}

fn rollout_csv(l: &dyn ErasedLagrangian, tr: &Trajectory) -> CliResult<String> {
    let d = tr.dof();
    let mut cols = vec!["t".to_string()];
    cols.extend((0..d).map(|i| format!("q{i}")));
    cols.extend((0..d).map(|i| format!("qd{i}")));
    cols.push("H".into());
    let mut out = cols.join(",");
    out.push('\n');
    for (t, s) in tr.times.iter().zip(&tr.states) {
        out.push_str(&fmt_f64(*t));
        for v in s.q.iter().chain(&s.q_dot) {
            write!(out, ",{}", fmt_f64(*v)).unwrap();
        }
        writeln!(out, ",{}", fmt_f64(l.energy(s)?)).unwrap();
    }
    Ok(out)
}

fn run_rollout(l: &dyn ErasedLagrangian, init: &PhaseState, cfg: &RolloutConfig) -> CliResult<String> {
    if !(cfg.dt > 0.0 && cfg.dt.is_finite()) {
        return Err(CliError::usage(format!("--dt must be positive, got {}", cfg.dt)));
    }
    let run = l.rollout(init, cfg.dt, cfg.steps).map_err(|e| match e {
        lagnet_core::Error::Rollout { last_finite } => CliError::Diverged(format!(
            "rollout blew up; {} finite rows before the failure",
            last_finite + 1
        )),
        other => other.into(),
    })?;
    eprintln!(
        "{} rows, {} degenerate acceleration evaluations",
        run.trajectory.len(),
        run.degenerate_events
    );
    rollout_csv(l, &run.trajectory)
}

pub fn rollout(args: RolloutArgs) -> CliResult<()> {
    let cfg: RolloutConfig = resolve(args.config.as_deref(), &args)?;
    let csv = match (&cfg.checkpoint, &cfg.analytic) {
        (Some(path), None) => {
            if cfg.sites.is_some() || cfg.dx.is_some() {
                return Err(CliError::usage("--sites and --dx apply only to --analytic wave1d"));
            }
            let ckpt = Checkpoint::load(path)?;
            let model = ckpt.model()?;
            let init = parse_init(&cfg.init, model.dof())?;
            model.with_lagrangian(&ckpt.flat_parameters, |l| run_rollout(l, &init, &cfg))??
        }
        (None, Some(name)) => {
            let sys = system_with_lattice(name, cfg.sites, cfg.dx)?;
            let init = parse_init(&cfg.init, sys.dim())?;
            run_rollout(&sys, &init, &cfg)?
        }
        _ => return Err(CliError::usage("pass exactly one of --checkpoint and --analytic")),
    };
    write_atomic(&cfg.out, csv.as_bytes())?;
    write_json(&sibling_config_path(&cfg.out), &cfg)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldAccelConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(default = "default_sites")]
    pub sites: usize,
    #[serde(default = "default_dx")]
    pub dx: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_dense_limit")]
    pub dense_limit: usize,
    pub out: PathBuf,
}

fn default_sites() -> usize {
    64
}

fn default_dx() -> f64 {
    1.0
}

fn default_dense_limit() -> usize {
    256
}

#[derive(Debug, Serialize)]
struct FieldSummary {
    n: usize,
    dx: f64,
    density: String,
    degenerate: bool,
    dense_fallback: bool,
    dense_compared: bool,
    max_abs_diff: Option<f64>,
}

fn compare<D: SiteDensity>(local: &D, field: &GridField, dense_limit: usize) -> CliResult<(Vec<f64>, FieldSummary)> {
    let n = field.sites();
    let stencils = StencilSet::nearest_neighbor(n);
    let start = Instant::now();
    let banded = field_accel_banded(local, field, &stencils)?;
    let banded_secs = start.elapsed().as_secs_f64();
    eprintln!("banded solve: {banded_secs:.4} s for {n} sites");
    let mut max_abs_diff = None;
    if n <= dense_limit {
        let start = Instant::now();
        let dense = field_accel_dense(local, field, &stencils)?;
        let dense_secs = start.elapsed().as_secs_f64();
        eprintln!(
            "dense solve: {dense_secs:.4} s ({:.1}x banded)",
            dense_secs / banded_secs.max(f64::MIN_POSITIVE)
        );
        max_abs_diff = Some(
            banded
                .phi_ddot
                .iter()
                .zip(&dense.phi_ddot)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        );
    } else {
        eprintln!("dense solve skipped: {n} sites exceeds the dense limit {dense_limit}");
    }
    let summary = FieldSummary {
        n,
        dx: field.dx,
        density: String::new(),
        degenerate: banded.degenerate,
        dense_fallback: banded.dense_fallback,
        dense_compared: max_abs_diff.is_some(),
        max_abs_diff,
    };
    Ok((banded.phi_ddot, summary))
}

pub fn field_accel(args: FieldAccelArgs) -> CliResult<()> {
    let cfg: FieldAccelConfig = resolve(args.config.as_deref(), &args)?;
    let field = match (&cfg.field, cfg.seed) {
        (Some(path), _) => load_field(path)?,
        (None, Some(seed)) => {
            let mut rng = SeededRng::new(seed);
            let phi = (0..cfg.sites).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let phi_dot = (0..cfg.sites).map(|_| rng.uniform(-1.0, 1.0)).collect();
            GridField::new(phi, phi_dot, cfg.dx)?
        }
        (None, None) => return Err(CliError::usage("pass --field or --seed")),
    };
    let (accel, mut summary) = match &cfg.checkpoint {
        None => {
            let (a, mut s) = compare(&FdWaveDensity, &field, cfg.dense_limit)?;
            s.density = "fd_wave".into();
            (a, s)
        }
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let Model::Lattice(g) = ckpt.model()? else {
                return Err(CliError::usage(format!("{}: not a lattice_density checkpoint", path.display())));
            };
            let (a, mut s) = compare(&g.net.bind(&ckpt.flat_parameters)?, &field, cfg.dense_limit)?;
            s.density = "network".into();
            (a, s)
        }
    };
    summary.dx = field.dx;

    save_field(&cfg.out.join("field.csv"), &field)?;
    let mut csv = String::from("site,phi_ddot\n");
    for (i, a) in accel.iter().enumerate() {
        writeln!(csv, "{i},{}", fmt_f64(*a)).unwrap();
    }
    write_atomic(&cfg.out.join("accel.csv"), csv.as_bytes())?;
    write_json(&cfg.out.join("summary.json"), &summary)?;
    write_json(&cfg.out.join(RESOLVED_CONFIG_FILE), &cfg)
}

