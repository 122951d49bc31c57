//! The learnable Lagrangian: a fully connected network from `(q, q̇)` to a
//! scalar, with smooth activations and a linear output layer.
//!
//! Parameters are stored flat, layer by layer. Within a layer the weight
//! matrix comes first in row-major order (`W[out][in]`), followed by the bias
//! vector.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffkit::{packed_index, Affine, DerivativeBundle, Jet2, Real, Recorded, Tape, Var};
use crate::eldyn::{AccelResult, ElSystem, Lagrangian, PhaseState};
use crate::rng::SeededRng;
use crate::{Error, Result};

/// Hidden-layer activation. Only activations with a second derivative that is
/// not identically zero are representable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Activation {
    Softplus,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply<T: Real>(self, z: &T) -> T {
        match self {
            Activation::Softplus => z.softplus(),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => z.sigmoid(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Softplus => "softplus",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "softplus" => Ok(Activation::Softplus),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "relu" | "leaky_relu" | "leakyrelu" | "identity" | "linear" | "hardtanh" => {
                Err(Error::Config(format!(
                    "activation `{s}` is piecewise linear: its second derivative vanishes, \
                     so the velocity Hessian would be zero; use softplus, tanh or sigmoid"
                )))
            }
            other => Err(Error::Config(format!(
                "unknown activation `{other}` (expected softplus, tanh or sigmoid)"
            ))),
        }
    }
}

impl TryFrom<String> for Activation {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Activation> for String {
    fn from(a: Activation) -> String {
        a.name().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
}

impl NetworkConfig {
    /// Two hidden layers of 64 softplus units.
    pub fn desk(input_dim: usize, seed: u64) -> Self {
        NetworkConfig {
            input_dim,
            hidden_layers: alloc::vec![64, 64],
            activation: Activation::Softplus,
            seed,
        }
    }

    /// Four hidden layers of 500 softplus units.
    pub fn paper(input_dim: usize, seed: u64) -> Self {
        NetworkConfig {
            input_dim,
            hidden_layers: alloc::vec![500, 500, 500, 500],
            activation: Activation::Softplus,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be positive".into()));
        }
        if self.hidden_layers.is_empty() {
            return Err(Error::Config("hidden_layers must not be empty".into()));
        }
        if self.hidden_layers.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        Ok(())
    }

    /// `(n_in, n_out)` of every layer, output layer last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden_layers.len() + 1);
        let mut n_in = self.input_dim;
        for &w in &self.hidden_layers {
            shapes.push((n_in, w));
            n_in = w;
        }
        shapes.push((n_in, 1));
        shapes
    }

    /// `P = Σ (n_in + 1) · n_out`.
    pub fn param_count(&self) -> usize {
        self.layer_shapes()
            .iter()
            .map(|(i, o)| (i + 1) * o)
            .sum()
    }
}

/// All weights and biases, flat-indexable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    shapes: Vec<(usize, usize)>,
    values: Vec<f64>,
}

impl ParameterSet {
    pub fn zeros(config: &NetworkConfig) -> Self {
        ParameterSet {
            shapes: config.layer_shapes(),
            values: alloc::vec![0.0; config.param_count()],
        }
    }

    pub fn from_flat(config: &NetworkConfig, values: Vec<f64>) -> Result<Self> {
        let expected = config.param_count();
        if values.len() != expected {
            return Err(Error::dim("flat parameters", expected, values.len()));
        }
        Ok(ParameterSet {
            shapes: config.layer_shapes(),
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, k: usize) -> f64 {
        self.values[k]
    }

    pub fn set(&mut self, k: usize, v: f64) {
        self.values[k] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.values
    }

    pub fn layer_count(&self) -> usize {
        self.shapes.len()
    }

    fn layer_offset(&self, layer: usize) -> usize {
        self.shapes[..layer].iter().map(|(i, o)| (i + 1) * o).sum()
    }

    /// Flat index of `W[layer][out][inp]`.
    pub fn weight_index(&self, layer: usize, out: usize, inp: usize) -> usize {
        let (n_in, _) = self.shapes[layer];
        self.layer_offset(layer) + out * n_in + inp
    }

    /// Flat index of `b[layer][out]`.
    pub fn bias_index(&self, layer: usize, out: usize) -> usize {
        let (n_in, n_out) = self.shapes[layer];
        self.layer_offset(layer) + n_in * n_out + out
    }
}

/// Optional per-feature standardization `x' = (x − shift) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputTransform {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputTransform {
    /// Mean and standard deviation of every feature; constant features keep
    /// unit scale.
    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]>) -> Option<Self> {
        let mut n = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        for r in rows {
            if sum.is_empty() {
                sum = alloc::vec![0.0; r.len()];
                sq = alloc::vec![0.0; r.len()];
            }
            for (k, v) in r.iter().enumerate() {
                sum[k] += v;
                sq[k] += v * v;
            }
            n += 1;
        }
        if n == 0 {
            return None;
        }
        let nf = n as f64;
        let shift: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let scale = sq
            .iter()
            .zip(&shift)
            .map(|(s, m)| {
                let var = (s / nf - m * m).max(0.0);
                let sd = libm::sqrt(var);
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Some(InputTransform { shift, scale })
    }
}

/// A network architecture with its (optional) input transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub config: NetworkConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<InputTransform>,
}

impl Mlp {
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        Ok(Mlp {
            config,
            transform: None,
        })
    }

    pub fn with_transform(mut self, transform: InputTransform) -> Result<Self> {
        let n = self.config.input_dim;
        if transform.shift.len() != n || transform.scale.len() != n {
            return Err(Error::dim("input transform", n, transform.shift.len()));
        }
        self.transform = Some(transform);
        Ok(self)
    }

    pub fn param_count(&self) -> usize {
        self.config.param_count()
    }

    /// Zero-mean uniform weights with variance `2 / (n_in + n_out)`, zero
    /// biases, determined entirely by the configured seed.
    pub fn init(&self) -> ParameterSet {
        let mut rng = SeededRng::new(self.config.seed);
        let mut p = ParameterSet::zeros(&self.config);
        for layer in 0..p.layer_count() {
            let (n_in, n_out) = p.shapes[layer];
            let a = libm::sqrt(6.0 / (n_in + n_out) as f64);
            for o in 0..n_out {
                for i in 0..n_in {
                    let k = p.weight_index(layer, o, i);
                    p.values[k] = rng.uniform(-a, a);
                }
            }
        }
        p
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.input_dim {
            return Err(Error::dim("network input", self.config.input_dim, x.len()));
        }
        Ok(())
    }

    fn check_params<T>(&self, params: &[T]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::dim("parameter vector", self.param_count(), params.len()));
        }
        Ok(())
    }

    fn transformed(&self, k: usize, x: f64) -> (f64, f64) {
        match &self.transform {
            Some(t) => ((x - t.shift[k]) / t.scale[k], 1.0 / t.scale[k]),
            None => (x, 1.0),
        }
    }

    /// Generic forward pass: parameters of type `P`, activations of type `T`.
    pub fn forward_with<P: Real, T: Real + Affine<P>>(&self, params: &[P], mut act: Vec<T>) -> T {
        let shapes = self.config.layer_shapes();
        let mut offset = 0;
        for (li, &(n_in, n_out)) in shapes.iter().enumerate() {
            let w = &params[offset..offset + n_in * n_out];
            let b = &params[offset + n_in * n_out..offset + (n_in + 1) * n_out];
            offset += (n_in + 1) * n_out;
            let last = li + 1 == shapes.len();
            act = (0..n_out)
                .map(|o| {
                    let z = T::affine(&w[o * n_in..(o + 1) * n_in], &act, &b[o]);
                    if last {
                        z
                    } else {
                        self.config.activation.apply(&z)
                    }
                })
                .collect();
        }
        act.pop().expect("output layer has one unit")
    }

    /// Network inputs in scalar type `S`, including the input transform.
    pub fn lift_inputs<S: Real>(&self, x: &[S]) -> Vec<S> {
        match &self.transform {
            Some(t) => x
                .iter()
                .enumerate()
                .map(|(k, v)| (v.clone() - t.shift[k]) / t.scale[k])
                .collect(),
            None => x.to_vec(),
        }
    }

    /// Second-order jets of the (transformed) inputs over the raw inputs.
    pub fn input_jets<S: Real>(&self, x: &[f64]) -> Vec<Jet2<S>> {
        let n = x.len();
        x.iter()
            .enumerate()
            .map(|(k, &v)| {
                let (xt, slope) = self.transformed(k, v);
                Jet2::seeded(S::from_f64(xt), k, slope, n)
            })
            .collect()
    }

    /// Scalar output at a raw input vector.
    pub fn eval_raw(&self, params: &[f64], x: &[f64]) -> Result<f64> {
        self.check_params(params)?;
        self.check_input(x)?;
        let inputs = self.lift_inputs(x);
        Ok(self.forward_with::<f64, f64>(params, inputs))
    }

    /// Value, gradient and Hessian with respect to the raw inputs.
    pub fn bundle_raw(&self, params: &[f64], x: &[f64]) -> Result<DerivativeBundle> {
        self.check_params(params)?;
        self.check_input(x)?;
        let out = self.forward_with::<f64, Jet2<f64>>(params, self.input_jets(x));
        let b = DerivativeBundle::from_jet(&out, x.len());
        if !b.is_finite() {
            return Err(Error::non_finite("network bundle", x));
        }
        Ok(b)
    }

    /// `L_θ(q, q̇)`.
    pub fn forward(&self, params: &ParameterSet, state: &PhaseState) -> Result<f64> {
        self.eval_raw(params.as_slice(), &state.concat())
    }

    /// Value, gradient and Hessian of `L_θ` over `(q, q̇)`.
    pub fn lagrangian_bundle(&self, params: &ParameterSet, state: &PhaseState) -> Result<DerivativeBundle> {
        self.bundle_raw(params.as_slice(), &state.concat())
    }

    /// Binds a parameter vector, giving a [`Lagrangian`].
    pub fn bind<'a>(&'a self, params: &'a [f64]) -> Result<NetLagrangian<'a>> {
        self.check_params(params)?;
        if self.config.input_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "a Lagrangian network needs an even input dimension, got {}",
                self.config.input_dim
            )));
        }
        Ok(NetLagrangian { mlp: self, params })
    }

    /// Accelerations predicted by the network Lagrangian.
    pub fn predict(&self, params: &[f64], state: &PhaseState) -> Result<AccelResult> {
        crate::eldyn::accel(&self.bind(params)?, state)
    }

    /// Records `‖q̈_θ − q̈_true‖₂` on `tape` and returns the reverse seeds.
    ///
    /// The input gradient and Hessian are recorded as jets over tape
    /// variables; the pseudoinverse solve enters through its analytic adjoint
    /// ([`crate::eldyn::ElSolution::adjoint`]).
    pub fn record_accel_loss<'t>(
        &self,
        params: &[Var<'t>],
        state: &PhaseState,
        target: &[f64],
    ) -> Result<Recorded<'t>> {
        self.check_params(params)?;
        let x = state.concat();
        self.check_input(&x)?;
        let d = state.dof();
        if target.len() != d {
            return Err(Error::dim("target acceleration", d, target.len()));
        }
        let out = self.forward_with::<Var<'t>, Jet2<Var<'t>>>(params, self.input_jets(&x));
        let values = Jet2 {
            value: out.value.value(),
            grad: out.grad.iter().map(|v| v.value()).collect(),
            hess: out.hess.iter().map(|v| v.value()).collect(),
        };
        let bundle = DerivativeBundle::from_jet(&values, 2 * d);
        if !bundle.is_finite() {
            return Err(Error::non_finite("network bundle", &x));
        }
        let sol = ElSystem::from_bundle(&bundle).solve(&state.q_dot);
        let (loss, upstream) = norm_loss(&sol.accel.q_ddot, target);
        let adj = sol.adjoint(&upstream, &state.q_dot);
        let mut seeds = Vec::with_capacity(d + d * d + d * (d + 1) / 2);
        for i in 0..d {
            seeds.push((out.grad[i], adj.force(i)));
            for j in 0..d {
                seeds.push((out.hess[packed_index(d + i, j)], adj.mixed(i, j)));
            }
            for j in 0..=i {
                seeds.push((out.hess[packed_index(d + i, d + j)], adj.velocity_hessian_sym(i, j)));
            }
        }
        Ok(Recorded {
            loss,
            seeds,
            degenerate: sol.accel.degenerate,
        })
    }

    /// Convenience: records the loss on a fresh tape over `params`.
    pub fn accel_loss_gradient(
        &self,
        params: &[f64],
        state: &PhaseState,
        target: &[f64],
    ) -> Result<(f64, Vec<f64>)> {
        let tape = Tape::new();
        let vars = tape.vars(params);
        let rec = self.record_accel_loss(&vars, state, target)?;
        let adj = tape.adjoints(&rec.seeds);
        Ok((rec.loss, vars.iter().map(|v| v.adjoint_in(&adj)).collect()))
    }
}

/// `‖pred − target‖₂` and its gradient with respect to `pred` (zero at the
/// minimum, where the norm is not differentiable).
pub fn norm_loss(pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let diff: Vec<f64> = pred.iter().zip(target).map(|(p, t)| p - t).collect();
    let loss = libm::sqrt(diff.iter().map(|e| e * e).sum());
    let grad = if loss > 0.0 {
        diff.iter().map(|e| e / loss).collect()
    } else {
        alloc::vec![0.0; diff.len()]
    };
    (loss, grad)
}

/// A network bound to a parameter vector.
#[derive(Debug, Clone, Copy)]
pub struct NetLagrangian<'a> {
    mlp: &'a Mlp,
    params: &'a [f64],
}

impl Lagrangian for NetLagrangian<'_> {
    fn dof(&self) -> usize {
        self.mlp.config.input_dim / 2
    }

    fn eval<S: Real>(&self, q: &[S], q_dot: &[S]) -> S {
        let mut x = q.to_vec();
        x.extend_from_slice(q_dot);
        let params: Vec<S> = self.params.iter().map(|&p| S::from_f64(p)).collect();
        let inputs = self.mlp.lift_inputs(&x);
        self.mlp.forward_with::<S, S>(&params, inputs)
    }

    fn value(&self, state: &PhaseState) -> f64 {
        let inputs = self.mlp.lift_inputs(&state.concat());
        self.mlp.forward_with::<f64, f64>(self.params, inputs)
    }

    fn bundle(&self, state: &PhaseState) -> Result<DerivativeBundle> {
        self.mlp.bundle_raw(self.params, &state.concat())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffkit::{self, ScalarFn};
    use crate::eldyn::AsScalarFn;

    fn desk1() -> Mlp {
        Mlp::new(NetworkConfig::desk(2, 1)).unwrap()
    }

    #[test]
    fn param_count_formula() {
        assert_eq!(NetworkConfig::desk(2, 0).param_count(), 3 * 64 + 65 * 64 + 65);
        // 5·500 + 3·(501·500) + 501
        assert_eq!(NetworkConfig::paper(4, 0).param_count(), 754_501);
    }

    #[test]
    fn init_is_seed_determined() {
        let a = desk1().init();
        let b = desk1().init();
        assert_eq!(a, b);
        let c = Mlp::new(NetworkConfig::desk(2, 2)).unwrap().init();
        assert_ne!(a, c);
        for layer in 0..a.layer_count() {
            assert_eq!(a.get(a.bias_index(layer, 0)), 0.0);
        }
    }

    #[test]
    fn init_variance_matches_glorot() {
        let mlp = Mlp::new(NetworkConfig {
            input_dim: 200,
            hidden_layers: alloc::vec![300],
            activation: Activation::Tanh,
            seed: 9,
        })
        .unwrap();
        let p = mlp.init();
        let w: Vec<f64> = (0..300)
            .flat_map(|o| (0..200).map(move |i| (o, i)))
            .map(|(o, i)| p.get(p.weight_index(0, o, i)))
            .collect();
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let var = w.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 2e-3);
        assert!((var / (2.0 / 500.0) - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn config_validation() {
        let mut c = NetworkConfig::desk(2, 0);
        c.hidden_layers.clear();
        assert!(Mlp::new(c).is_err());
        assert!(matches!("relu".parse::<Activation>(), Err(Error::Config(_))));
        assert_eq!("Tanh".parse::<Activation>().unwrap(), Activation::Tanh);
    }

    #[test]
    fn zero_network_is_flat() {
        let mlp = desk1();
        let zero = ParameterSet::zeros(&mlp.config);
        let s = PhaseState::new(alloc::vec![0.3], alloc::vec![-1.2]).unwrap();
        assert_eq!(mlp.forward(&zero, &s).unwrap(), 0.0);
        let b = mlp.lagrangian_bundle(&zero, &s).unwrap();
        assert!(b.gradient.iter().all(|&g| g == 0.0));
        assert!(b.hessian.as_slice().iter().all(|&h| h == 0.0));
    }

    #[test]
    fn single_softplus_unit() {
        let mlp = Mlp::new(NetworkConfig {
            input_dim: 2,
            hidden_layers: alloc::vec![1],
            activation: Activation::Softplus,
            seed: 0,
        })
        .unwrap();
        let mut p = ParameterSet::zeros(&mlp.config);
        p.set(p.weight_index(0, 0, 0), 1.0);
        p.set(p.weight_index(1, 0, 0), 1.0);
        let s = PhaseState::new(alloc::vec![0.0], alloc::vec![5.0]).unwrap();
        let v = mlp.forward(&p, &s).unwrap();
        assert!((v - core::f64::consts::LN_2).abs() < 1e-16);
    }

    #[test]
    fn bundle_value_equals_forward_and_matches_generic_path() {
        let mlp = desk1();
        let p = mlp.init();
        let s = PhaseState::new(alloc::vec![0.7], alloc::vec![-0.4]).unwrap();
        let b = mlp.lagrangian_bundle(&p, &s).unwrap();
        assert_eq!(b.value, mlp.forward(&p, &s).unwrap());
        let net = mlp.bind(p.as_slice()).unwrap();
        let generic = diffkit::bundle(&AsScalarFn(&net), &s.concat()).unwrap();
        assert_eq!(generic.value, b.value);
        for (x, y) in generic.hessian.as_slice().iter().zip(b.hessian.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
        let _ = AsScalarFn(&net).dim();
    }

    #[test]
    fn transform_changes_derivatives_by_chain_rule() {
        let mlp = desk1();
        let p = mlp.init();
        let t = InputTransform {
            shift: alloc::vec![0.5, -0.25],
            scale: alloc::vec![2.0, 0.5],
        };
        let scaled = mlp.clone().with_transform(t).unwrap();
        let x = [1.1, 0.3];
        let xt = [(1.1 - 0.5) / 2.0, (0.3 + 0.25) / 0.5];
        let b_raw = mlp.bundle_raw(p.as_slice(), &xt).unwrap();
        let b = scaled.bundle_raw(p.as_slice(), &x).unwrap();
        assert_eq!(b.value, b_raw.value);
        assert!((b.gradient[0] - b_raw.gradient[0] / 2.0).abs() < 1e-14);
        assert!((b.gradient[1] - b_raw.gradient[1] / 0.5).abs() < 1e-14);
        assert!((b.hessian[(0, 1)] - b_raw.hessian[(0, 1)] / 1.0).abs() < 1e-13);
        assert!((b.hessian[(1, 1)] - b_raw.hessian[(1, 1)] / 0.25).abs() < 1e-12);
    }

    #[test]
    fn accel_loss_at_target_is_zero() {
        let mlp = desk1();
        let p = mlp.init();
        let s = PhaseState::new(alloc::vec![0.2], alloc::vec![0.1]).unwrap();
        let a = mlp.predict(p.as_slice(), &s).unwrap();
        let (loss, g) = mlp.accel_loss_gradient(p.as_slice(), &s, &a.q_ddot).unwrap();
        assert!(loss < 1e-12);
        assert!(g.iter().all(|v| v.abs() < 1e-6));
    }
}
