//! Acceleration-matching loss, Adam, and the minibatch training loop.
//!
//! The per-sample loss is `‖q̈_θ − q̈_true‖₂`; a batch loss is the mean over
//! the batch, always summed in ascending sample-index order so results are
//! bitwise reproducible.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::diffkit::{self, Recorded, Tape, TapeLoss, Var};
use crate::eldyn::PhaseState;
use crate::gridlag::{DensityNet, GridField, StencilSet};
use crate::netcore::{norm_loss, InputTransform, Mlp};
use crate::refsys::Trajectory;
use crate::rng::{child_seed, SeededRng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossReduction {
    /// Mean over samples of the Euclidean norm of the acceleration error.
    #[default]
    PerSampleNormMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_initial: f64,
    /// Multiplicative learning-rate factor applied after every epoch.
    pub lr_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Fraction of trajectories used for training; the rest validate.
    pub split: f64,
    pub loss_reduction: LossReduction,
    /// Standardize network inputs with training-set statistics.
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            lr_initial: 1e-3,
            lr_decay: 0.99,
            epochs: 50,
            seed: 0,
            split: 0.9,
            loss_reduction: LossReduction::PerSampleNormMean,
            standardize: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr_initial > 0.0 && self.lr_initial.is_finite()) {
            return Err(Error::Config(format!("lr_initial must be positive, got {}", self.lr_initial)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) {
            return Err(Error::Config(format!("lr_decay must be positive, got {}", self.lr_decay)));
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(Error::Config(format!("split must lie in (0, 1), got {}", self.split)));
        }
        Ok(())
    }
}

/// A state and its observed acceleration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub state: PhaseState,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn from_trajectories<'a>(trajs: impl IntoIterator<Item = &'a Trajectory>) -> Self {
        let samples = trajs
            .into_iter()
            .flat_map(|t| {
                t.states.iter().zip(&t.accels).map(|(s, a)| Sample {
                    state: s.clone(),
                    target: a.clone(),
                })
            })
            .collect();
        Dataset { samples }
    }

    /// Seeded split by whole trajectories, so no trajectory contributes to
    /// both sides. At least one trajectory lands on each side.
    pub fn split_trajectories(trajs: &[Trajectory], split: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        let count = trajs.len();
        if count < 2 {
            return Err(Error::Usage(format!(
                "a train/validation split needs at least 2 trajectories, got {count}"
            )));
        }
        let mut order: Vec<usize> = (0..count).collect();
        SeededRng::new(child_seed(seed, SPLIT_STREAM)).shuffle(&mut order);
        let n_train = (libm::round(split * count as f64) as usize).clamp(1, count - 1);
        let (tr, va) = order.split_at(n_train);
        let mut tr = tr.to_vec();
        let mut va = va.to_vec();
        tr.sort_unstable();
        va.sort_unstable();
        Ok((
            Dataset::from_trajectories(tr.iter().map(|&k| &trajs[k])),
            Dataset::from_trajectories(va.iter().map(|&k| &trajs[k])),
        ))
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dof(&self) -> Option<usize> {
        self.samples.first().map(|s| s.state.dof())
    }
}

const SPLIT_STREAM: u64 = 0x5_0117;
const SHUFFLE_STREAM: u64 = 0x5_4FF1;

/// Fits per-feature standardization of `(q, q̇)` on a dataset.
pub fn fit_standardization(mlp: Mlp, data: &Dataset) -> Result<Mlp> {
    let rows: Vec<Vec<f64>> = data.samples.iter().map(|s| s.state.concat()).collect();
    let t = InputTransform::fit(rows.iter().map(Vec::as_slice))
        .ok_or_else(|| Error::Usage("cannot standardize an empty dataset".into()))?;
    mlp.with_transform(t)
}

/// A parametric model of accelerations that can record its loss on a tape.
pub trait DynamicsModel {
    fn dof(&self) -> usize;
    fn param_count(&self) -> usize;
    /// Predicted accelerations and whether the solve was degenerate.
    fn predict(&self, params: &[f64], state: &PhaseState) -> Result<(Vec<f64>, bool)>;
    fn record_sample_loss<'t>(&self, params: &[Var<'t>], sample: &Sample) -> Result<Recorded<'t>>;
}

impl DynamicsModel for Mlp {
    fn dof(&self) -> usize {
        self.config.input_dim / 2
    }

    fn param_count(&self) -> usize {
        Mlp::param_count(self)
    }

    fn predict(&self, params: &[f64], state: &PhaseState) -> Result<(Vec<f64>, bool)> {
        let a = Mlp::predict(self, params, state)?;
        Ok((a.q_ddot, a.degenerate))
    }

    fn record_sample_loss<'t>(&self, params: &[Var<'t>], sample: &Sample) -> Result<Recorded<'t>> {
        self.record_accel_loss(params, &sample.state, &sample.target)
    }
}

/// A shared per-site density network on a fixed periodic lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridModel {
    pub net: DensityNet,
    pub stencils: StencilSet,
    pub dx: f64,
}

impl GridModel {
    fn field(&self, state: &PhaseState) -> Result<GridField> {
        if state.dof() != self.stencils.sites.len() {
            return Err(Error::dim("field sites", self.stencils.sites.len(), state.dof()));
        }
        GridField::from_state(state, self.dx)
    }
}

impl DynamicsModel for GridModel {
    fn dof(&self) -> usize {
        self.stencils.sites.len()
    }

    fn param_count(&self) -> usize {
        self.net.mlp.param_count()
    }

    fn predict(&self, params: &[f64], state: &PhaseState) -> Result<(Vec<f64>, bool)> {
        let acc = self.net.predict(params, &self.field(state)?, &self.stencils)?;
        Ok((acc.phi_ddot, acc.degenerate))
    }

    fn record_sample_loss<'t>(&self, params: &[Var<'t>], sample: &Sample) -> Result<Recorded<'t>> {
        self.net
            .record_accel_loss(params, &self.field(&sample.state)?, &self.stencils, &sample.target)
    }
}

fn check_sample<M: DynamicsModel + ?Sized>(model: &M, sample: &Sample) -> Result<()> {
    let d = model.dof();
    if sample.state.dof() != d {
        return Err(Error::dim("sample state", d, sample.state.dof()));
    }
    if sample.target.len() != d {
        return Err(Error::dim("target acceleration", d, sample.target.len()));
    }
    Ok(())
}

/// `‖q̈_θ − q̈_true‖₂` for one sample.
pub fn sample_loss<M: DynamicsModel + ?Sized>(model: &M, params: &[f64], sample: &Sample) -> Result<f64> {
    check_sample(model, sample)?;
    let (pred, _) = model.predict(params, &sample.state)?;
    Ok(norm_loss(&pred, &sample.target).0)
}

fn sorted_indices(batch: &[usize]) -> Vec<usize> {
    let mut idx = batch.to_vec();
    idx.sort_unstable();
    idx
}

/// Mean sample loss over `batch` (indices into `data`), summed in ascending
/// index order.
pub fn batch_loss<M: DynamicsModel + ?Sized>(model: &M, params: &[f64], data: &Dataset, batch: &[usize]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Usage("batch is empty".into()));
    }
    let mut total = 0.0;
    for k in sorted_indices(batch) {
        total += sample_loss(model, params, sample_at(data, k)?)?;
    }
    Ok(total / batch.len() as f64)
}

/// Mean sample loss over the whole dataset.
pub fn evaluate<M: DynamicsModel + ?Sized>(model: &M, params: &[f64], data: &Dataset) -> Result<f64> {
    let all: Vec<usize> = (0..data.len()).collect();
    batch_loss(model, params, data, &all)
}

fn sample_at(data: &Dataset, k: usize) -> Result<&Sample> {
    data.samples
        .get(k)
        .ok_or_else(|| Error::Usage(format!("sample index {k} out of range for {} samples", data.len())))
}

/// The batch loss as a [`TapeLoss`] over the model parameters.
pub struct BatchLoss<'a, M: ?Sized> {
    pub model: &'a M,
    pub data: &'a Dataset,
    pub batch: Vec<usize>,
}

impl<M: DynamicsModel + ?Sized> TapeLoss for BatchLoss<'_, M> {
    fn param_count(&self) -> usize {
        self.model.param_count()
    }

    fn record<'t>(&self, _tape: &'t Tape, theta: &[Var<'t>]) -> Result<Recorded<'t>> {
        if self.batch.is_empty() {
            return Err(Error::Usage("batch is empty".into()));
        }
        let scale = 1.0 / self.batch.len() as f64;
        let mut out = Recorded {
            loss: 0.0,
            seeds: Vec::new(),
            degenerate: false,
        };
        for k in sorted_indices(&self.batch) {
            let sample = sample_at(self.data, k)?;
            check_sample(self.model, sample)?;
            let rec = self.model.record_sample_loss(theta, sample)?;
            out.loss += rec.loss;
            out.degenerate |= rec.degenerate;
            out.seeds.extend(rec.seeds.into_iter().map(|(v, s)| (v, s * scale)));
        }
        out.loss *= scale;
        Ok(out)
    }
}

/// Batch loss, its parameter gradient, and the number of samples whose
/// solve was degenerate.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradient {
    pub loss: f64,
    pub gradient: Vec<f64>,
    pub degenerate_events: usize,
}

/// Same value as [`diffkit::parameter_gradient`] on a [`BatchLoss`], with one
/// short tape per sample instead of one tape for the whole batch.
pub fn batch_gradient<M: DynamicsModel + ?Sized>(
    model: &M,
    params: &[f64],
    data: &Dataset,
    batch: &[usize],
) -> Result<BatchGradient> {
    if batch.is_empty() {
        return Err(Error::Usage("batch is empty".into()));
    }
    if params.len() != model.param_count() {
        return Err(Error::dim("parameter vector", model.param_count(), params.len()));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut gradient = vec![0.0; params.len()];
    let mut degenerate_events = 0;
    let mut tape = Tape::new();
    for k in sorted_indices(batch) {
        let sample = sample_at(data, k)?;
        check_sample(model, sample)?;
        tape.clear();
        let vars = tape.vars(params);
        let rec = model.record_sample_loss(&vars, sample)?;
        let seeds: Vec<_> = rec.seeds.iter().map(|&(v, s)| (v, s * scale)).collect();
        let adj = tape.adjoints(&seeds);
        for (g, v) in gradient.iter_mut().zip(&vars) {
            *g += v.adjoint_in(&adj);
        }
        loss += rec.loss;
        degenerate_events += usize::from(rec.degenerate);
    }
    Ok(BatchGradient {
        loss: loss * scale,
        gradient,
        degenerate_events,
    })
}

/// Adam with the usual constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> u32 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (libm::sqrt(v_hat) + self.eps);
        }
    }
}

/// State handed to the epoch observer after every epoch.
#[derive(Debug, Clone, Copy)]
pub struct EpochRecord<'a> {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub params: &'a [f64],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub format_version: u32,
    pub config: TrainConfig,
    pub optimizer: String,
    pub seed: u64,
    pub initial_train_loss: f64,
    pub initial_val_loss: f64,
    /// Mean training loss after each epoch.
    pub train_loss: Vec<f64>,
    /// Mean validation loss after each epoch.
    pub val_loss: Vec<f64>,
    pub steps: usize,
    pub degenerate_events: usize,
    /// Filled in by callers with a clock.
    pub wall_seconds: f64,
    #[serde(skip)]
    pub params: Vec<f64>,
}

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Runs `cfg.epochs` epochs of seeded, shuffled minibatch Adam on the
/// training set, starting from `init`. After every epoch the full training
/// and validation losses are computed and `observer` is called; an observer
/// error aborts training. A non-finite batch loss or gradient aborts with
/// [`Error::Diverged`] before the parameters are touched, so the last
/// observed parameters remain the last good ones.
pub fn train<M: DynamicsModel + ?Sized>(
    model: &M,
    init: Vec<f64>,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord<'_>) -> Result<()>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    if val_set.is_empty() {
        return Err(Error::Usage("validation set is empty".into()));
    }
    if init.len() != model.param_count() {
        return Err(Error::dim("parameter vector", model.param_count(), init.len()));
    }
    let mut params = init;
    let initial_train_loss = evaluate(model, &params, train_set)?;
    let initial_val_loss = evaluate(model, &params, val_set)?;

    let mut adam = Adam::new(params.len());
    let mut rng = SeededRng::new(child_seed(cfg.seed, SHUFFLE_STREAM));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut lr = cfg.lr_initial;
    let mut report = TrainReport {
        format_version: REPORT_FORMAT_VERSION,
        config: cfg.clone(),
        optimizer: "adam(beta1=0.9, beta2=0.999, eps=1e-8)".into(),
        seed: cfg.seed,
        initial_train_loss,
        initial_val_loss,
        train_loss: Vec::with_capacity(cfg.epochs),
        val_loss: Vec::with_capacity(cfg.epochs),
        steps: 0,
        degenerate_events: 0,
        wall_seconds: 0.0,
        params: Vec::new(),
    };

    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let g = batch_gradient(model, &params, train_set, batch)?;
            if !g.loss.is_finite() || g.gradient.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged { epoch, step });
            }
            adam.step(&mut params, &g.gradient, lr);
            report.degenerate_events += g.degenerate_events;
            report.steps += 1;
        }
        let train_loss = evaluate(model, &params, train_set)?;
        let val_loss = evaluate(model, &params, val_set)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                step: report.steps,
            });
        }
        report.train_loss.push(train_loss);
        report.val_loss.push(val_loss);
        observer(&EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
            params: &params,
        })?;
        lr *= cfg.lr_decay;
    }
    report.params = params;
    Ok(report)
}

/// [`diffkit::parameter_gradient`] of the batch loss.
pub fn batch_parameter_gradient<M: DynamicsModel + ?Sized>(
    model: &M,
    params: &[f64],
    data: &Dataset,
    batch: &[usize],
) -> Result<(f64, Vec<f64>)> {
    diffkit::parameter_gradient(
        &BatchLoss {
            model,
            data,
            batch: batch.to_vec(),
        },
        params,
    )
}
