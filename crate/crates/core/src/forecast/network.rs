//! Single-hidden-layer focused time-delay network.
//!
//! The network maps the tapped inputs `x = (b_t, b_{t-D}, ..., b_{t-(m-1)D})`
//! to `y = g0 + sum_j g_j * act(c_j + w_j . x)`. Weights live in one flat
//! vector, hidden units first, each as `[c_j, w_j1, ..., w_jm]`, followed by
//! the output block `[g0, g1, ..., gk]`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{uniform, JobRng};

pub const MAX_HIDDEN: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Logistic,
    Tanh,
    /// Removes the squasher; a one-unit identity network is affine in its inputs.
    Identity,
}

impl Activation {
    pub fn apply(self, n: f64) -> f64 {
        match self {
            Activation::Logistic => 1.0 / (1.0 + (-n).exp()),
            Activation::Tanh => n.tanh(),
            Activation::Identity => n,
        }
    }

    /// Derivative expressed through the activation value `a = apply(n)`.
    pub fn derivative_at_output(self, a: f64) -> f64 {
        match self {
            Activation::Logistic => a * (1.0 - a),
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Logistic => "logistic",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "logistic" | "sigmoid" => Ok(Activation::Logistic),
            "tanh" => Ok(Activation::Tanh),
            "identity" | "linear" => Ok(Activation::Identity),
            _ => Err(Error::Config(format!("unknown activation `{s}`"))),
        }
    }
}

/// `z = (x - offset) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub offset: f64,
    pub scale: f64,
}

impl Affine {
    pub fn new(offset: f64, scale: f64) -> Result<Self> {
        if !(offset.is_finite() && scale.is_finite() && scale != 0.0) {
            return Err(Error::ZeroVariance(format!("normalization scale {scale} is not invertible")));
        }
        Ok(Self { offset, scale })
    }

    /// Zero mean, unit (population) variance over `values`.
    pub fn standardize(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InsufficientData("no values to normalize".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        if !(sd > 1e-12 * mean.abs().max(1.0)) {
            return Err(Error::ZeroVariance(format!("series is constant at {mean} on the training range")));
        }
        Self::new(mean, sd)
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.offset) / self.scale
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        self.offset + self.scale * z
    }
}

/// Network shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mlp {
    pub inputs: usize,
    pub hidden: usize,
    pub activation: Activation,
}

impl Mlp {
    pub fn n_params(&self) -> usize {
        param_count(self.inputs, self.hidden)
    }

    fn output_offset(&self) -> usize {
        self.hidden * (self.inputs + 1)
    }

    pub fn output(&self, w: &[f64], x: &[f64]) -> f64 {
        debug_assert_eq!(w.len(), self.n_params());
        debug_assert_eq!(x.len(), self.inputs);
        let out = &w[self.output_offset()..];
        let mut y = out[0];
        for j in 0..self.hidden {
            let unit = &w[j * (self.inputs + 1)..(j + 1) * (self.inputs + 1)];
            let n = unit[0] + unit[1..].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            y += out[j + 1] * self.activation.apply(n);
        }
        y
    }

    /// Output and its gradient with respect to every weight.
    pub fn output_and_gradient(&self, w: &[f64], x: &[f64], grad: &mut [f64]) -> f64 {
        debug_assert_eq!(grad.len(), self.n_params());
        let stride = self.inputs + 1;
        let oo = self.output_offset();
        let mut y = w[oo];
        grad[oo] = 1.0;
        for j in 0..self.hidden {
            let unit = &w[j * stride..(j + 1) * stride];
            let n = unit[0] + unit[1..].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            let a = self.activation.apply(n);
            let g = w[oo + 1 + j];
            y += g * a;
            grad[oo + 1 + j] = a;
            let d = g * self.activation.derivative_at_output(a);
            grad[j * stride] = d;
            for (gi, xi) in grad[j * stride + 1..(j + 1) * stride].iter_mut().zip(x) {
                *gi = d * xi;
            }
        }
        y
    }

    /// Uniform(-0.5, 0.5) draws scaled by `2 * sqrt(3 / fan_in)`, which gives
    /// each weight variance `1 / fan_in`. Biases use the same scale as their
    /// layer's weights.
    pub fn initial_weights(&self, rng: &mut JobRng) -> Vec<f64> {
        let hidden_scale = 2.0 * (3.0 / self.inputs as f64).sqrt();
        let output_scale = 2.0 * (3.0 / self.hidden as f64).sqrt();
        let mut w = Vec::with_capacity(self.n_params());
        for _ in 0..self.output_offset() {
            w.push(uniform(rng, -0.5, 0.5) * hidden_scale);
        }
        for _ in 0..=self.hidden {
            w.push(uniform(rng, -0.5, 0.5) * output_scale);
        }
        w
    }
}

/// Total weight count `k (m + 1) + k + 1`.
pub fn param_count(inputs: usize, hidden: usize) -> usize {
    hidden * (inputs + 1) + hidden + 1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub hidden_neurons: usize,
    pub input_lags: usize,
    /// Panel steps between tapped inputs.
    pub delay: usize,
    /// Panel steps ahead.
    pub horizon: usize,
    pub seed: u64,
    pub activation: Activation,
    pub max_epochs: usize,
    pub lm_initial_damping: f64,
    pub lm_damping_up: f64,
    pub lm_damping_down: f64,
    pub lm_max_damping: f64,
    /// Consecutive validation checks without improvement before stopping; 0 disables.
    pub early_stop_patience: usize,
    /// Stop once the largest gradient component (normalized units) drops below this.
    pub gradient_tolerance: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden_neurons: 5,
            input_lags: 1,
            delay: 1,
            horizon: 1,
            seed: 0,
            activation: Activation::Logistic,
            max_epochs: 500,
            lm_initial_damping: 1e-3,
            lm_damping_up: 10.0,
            lm_damping_down: 10.0,
            lm_max_damping: 1e10,
            early_stop_patience: 25,
            gradient_tolerance: 1e-12,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(1..=MAX_HIDDEN).contains(&self.hidden_neurons) {
            return fail(format!("hidden_neurons must lie in 1..={MAX_HIDDEN}, got {}", self.hidden_neurons));
        }
        if self.horizon == 0 {
            return fail("horizon must be positive".into());
        }
        if self.input_lags == 0 || self.delay == 0 {
            return fail("input_lags and delay must be positive".into());
        }
        if self.max_epochs == 0 {
            return fail("max_epochs must be positive".into());
        }
        if !(self.lm_initial_damping > 0.0 && self.lm_max_damping >= self.lm_initial_damping) {
            return fail(format!(
                "damping must satisfy 0 < initial ({}) <= max ({})",
                self.lm_initial_damping, self.lm_max_damping
            ));
        }
        if !(self.lm_damping_up > 1.0 && self.lm_damping_down > 1.0) {
            return fail("damping factors must exceed 1".into());
        }
        if !(self.gradient_tolerance >= 0.0) {
            return fail("gradient_tolerance must be non-negative".into());
        }
        Ok(())
    }

    pub fn mlp(&self) -> Mlp {
        Mlp {
            inputs: self.input_lags,
            hidden: self.hidden_neurons,
            activation: self.activation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradientTolerance,
    DampingLimit,
    EarlyStopping,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingDiagnostics {
    /// Training SSE in original units at the returned weights.
    pub train_sse: f64,
    pub validation_sse: Option<f64>,
    pub n_train: usize,
    pub n_validation: usize,
    pub epochs: usize,
    pub stop: StopReason,
    /// False when training ran out of epochs.
    pub converged: bool,
    pub hqic: Option<f64>,
    /// Normalized training SSE after every accepted step, starting from the initial weights.
    #[serde(skip)]
    pub sse_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedNetwork {
    pub config: NetworkConfig,
    pub weights: Vec<f64>,
    pub input_norm: Affine,
    pub output_norm: Affine,
    pub diagnostics: TrainingDiagnostics,
}

impl TrainedNetwork {
    pub fn mlp(&self) -> Mlp {
        self.config.mlp()
    }

    pub fn n_params(&self) -> usize {
        self.weights.len()
    }

    /// Row `j` of the input-to-hidden block as `[bias, w_1, ..., w_m]`.
    pub fn hidden_unit(&self, j: usize) -> &[f64] {
        let s = self.config.input_lags + 1;
        &self.weights[j * s..(j + 1) * s]
    }

    /// `[g0, g1, ..., gk]`.
    pub fn output_weights(&self) -> &[f64] {
        &self.weights[self.config.hidden_neurons * (self.config.input_lags + 1)..]
    }

    /// Prediction from raw tapped inputs, most recent first.
    pub fn predict(&self, taps: &[f64]) -> f64 {
        let x: Vec<f64> = taps.iter().map(|v| self.input_norm.normalize(*v)).collect();
        self.output_norm.denormalize(self.mlp().output(&self.weights, &x))
    }

    /// `horizon`-step forecast made at `origin` of `series`.
    pub fn forecast(&self, series: &[f64], origin: usize) -> Result<f64> {
        let taps = taps_at(series, origin, self.config.input_lags, self.config.delay)
            .ok_or_else(|| Error::invalid(format!("origin {origin} lacks {} tapped inputs", self.config.input_lags)))?;
        Ok(self.predict(&taps))
    }

    pub fn to_document(&self) -> NetworkDocument {
        let stride = self.config.input_lags + 1;
        NetworkDocument {
            format: NETWORK_FORMAT.to_string(),
            version: NETWORK_FORMAT_VERSION,
            inputs: self.config.input_lags,
            hidden: self.config.hidden_neurons,
            activation: self.config.activation,
            hidden_weights: (0..self.config.hidden_neurons)
                .map(|j| self.weights[j * stride..(j + 1) * stride].to_vec())
                .collect(),
            output_weights: self.output_weights().to_vec(),
            input_norm: self.input_norm,
            output_norm: self.output_norm,
            seed: self.config.seed,
            config: self.config,
            diagnostics: self.diagnostics.clone(),
        }
    }

    pub fn from_document(doc: NetworkDocument) -> Result<Self> {
        if doc.format != NETWORK_FORMAT || doc.version != NETWORK_FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported network document {} v{}",
                doc.format, doc.version
            )));
        }
        let cfg = doc.config;
        if cfg.input_lags != doc.inputs || cfg.hidden_neurons != doc.hidden || cfg.activation != doc.activation {
            return Err(Error::invalid("network dims disagree with its config"));
        }
        if doc.hidden_weights.len() != doc.hidden
            || doc.hidden_weights.iter().any(|r| r.len() != doc.inputs + 1)
            || doc.output_weights.len() != doc.hidden + 1
        {
            return Err(Error::invalid("network weight blocks have the wrong shape"));
        }
        Affine::new(doc.input_norm.offset, doc.input_norm.scale)?;
        Affine::new(doc.output_norm.offset, doc.output_norm.scale)?;
        let mut weights: Vec<f64> = doc.hidden_weights.into_iter().flatten().collect();
        weights.extend(doc.output_weights);
        Ok(Self {
            config: cfg,
            weights,
            input_norm: doc.input_norm,
            output_norm: doc.output_norm,
            diagnostics: doc.diagnostics,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_document(serde_json::from_str(s)?)
    }
}

pub const NETWORK_FORMAT: &str = "ftdnn";
pub const NETWORK_FORMAT_VERSION: u32 = 1;

/// Serialized network: weights row-major by hidden unit, then the output row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDocument {
    pub format: String,
    pub version: u32,
    pub inputs: usize,
    pub hidden: usize,
    pub activation: Activation,
    pub hidden_weights: Vec<Vec<f64>>,
    pub output_weights: Vec<f64>,
    pub input_norm: Affine,
    pub output_norm: Affine,
    pub seed: u64,
    pub config: NetworkConfig,
    pub diagnostics: TrainingDiagnostics,
}

/// `(s[t], s[t - delay], ..., s[t - (lags - 1) delay])`, if all exist.
pub fn taps_at(series: &[f64], t: usize, lags: usize, delay: usize) -> Option<Vec<f64>> {
    if t >= series.len() || t < (lags - 1) * delay {
        return None;
    }
    Some((0..lags).map(|l| series[t - l * delay]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::job_rng;
    use proptest::prelude::*;

    fn central_difference(mlp: &Mlp, w: &[f64], x: &[f64], i: usize) -> f64 {
        let h = 1e-6 * w[i].abs().max(1.0);
        let mut wp = w.to_vec();
        let mut wm = w.to_vec();
        wp[i] += h;
        wm[i] -= h;
        (mlp.output(&wp, x) - mlp.output(&wm, x)) / (2.0 * h)
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        for act in [Activation::Logistic, Activation::Tanh, Activation::Identity] {
            for (k, m) in [(1, 1), (3, 2), (7, 3)] {
                let mlp = Mlp { inputs: m, hidden: k, activation: act };
                let mut rng = job_rng(5, &[k as u64, m as u64]);
                for _ in 0..10 {
                    let w: Vec<f64> = (0..mlp.n_params()).map(|_| uniform(&mut rng, -2.0, 2.0)).collect();
                    let x: Vec<f64> = (0..m).map(|_| uniform(&mut rng, -2.0, 2.0)).collect();
                    let mut g = vec![0.0; mlp.n_params()];
                    let y = mlp.output_and_gradient(&w, &x, &mut g);
                    assert!((y - mlp.output(&w, &x)).abs() < 1e-14);
                    for i in 0..g.len() {
                        let fd = central_difference(&mlp, &w, &x, i);
                        assert!((g[i] - fd).abs() / g[i].abs().max(1.0) < 1e-6, "{act} k={k} i={i}");
                    }
                }
            }
        }
    }

    #[test]
    fn parameter_layout() {
        assert_eq!(param_count(1, 1), 4);
        assert_eq!(param_count(1, 20), 61);
        assert_eq!(param_count(3, 5), 26);
        // y = g0 + g1 * (c + w x) with identity activation
        let mlp = Mlp { inputs: 1, hidden: 1, activation: Activation::Identity };
        assert_eq!(mlp.output(&[0.5, 2.0, 1.0, 3.0], &[4.0]), 1.0 + 3.0 * (0.5 + 8.0));
    }

    #[test]
    fn logistic_is_stable_at_extremes() {
        assert_eq!(Activation::Logistic.apply(-1000.0), 0.0);
        assert_eq!(Activation::Logistic.apply(1000.0), 1.0);
        assert_eq!(Activation::Logistic.apply(0.0), 0.5);
    }

    #[test]
    fn initial_weight_ranges() {
        let mlp = Mlp { inputs: 3, hidden: 12, activation: Activation::Logistic };
        let w = mlp.initial_weights(&mut job_rng(1, &[]));
        let (hid, out) = w.split_at(12 * 4);
        assert!(hid.iter().all(|v| v.abs() <= 1.0));
        assert!(out.iter().all(|v| v.abs() <= 0.5));
        assert_eq!(w, mlp.initial_weights(&mut job_rng(1, &[])));
    }

    #[test]
    fn config_validation() {
        assert!(NetworkConfig::default().validate().is_ok());
        for bad in [
            NetworkConfig { hidden_neurons: 0, ..Default::default() },
            NetworkConfig { hidden_neurons: 21, ..Default::default() },
            NetworkConfig { horizon: 0, ..Default::default() },
            NetworkConfig { lm_damping_up: 1.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn constant_series_cannot_be_normalized() {
        assert!(matches!(Affine::standardize(&[4.0; 10]), Err(Error::ZeroVariance(_))));
        assert!(Affine::new(1.0, 0.0).is_err());
    }

    #[test]
    fn taps() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(taps_at(&s, 4, 3, 2), Some(vec![5.0, 3.0, 1.0]));
        assert_eq!(taps_at(&s, 3, 3, 2), None);
        assert_eq!(taps_at(&s, 5, 1, 1), None);
    }

    #[test]
    fn document_round_trip() {
        let config = NetworkConfig { hidden_neurons: 3, input_lags: 2, ..Default::default() };
        let mlp = config.mlp();
        let net = TrainedNetwork {
            config,
            weights: mlp.initial_weights(&mut job_rng(9, &[])),
            input_norm: Affine::new(50.0, 12.5).unwrap(),
            output_norm: Affine::new(51.0, 0.1 + 1.0 / 3.0).unwrap(),
            diagnostics: TrainingDiagnostics {
                train_sse: 1.25,
                validation_sse: None,
                n_train: 100,
                n_validation: 0,
                epochs: 17,
                stop: StopReason::DampingLimit,
                converged: true,
                hqic: Some(-0.125),
                sse_history: Vec::new(),
            },
        };
        let back = TrainedNetwork::from_json(&net.to_json().unwrap()).unwrap();
        assert_eq!(back, net);
        assert_eq!(back.hidden_unit(1), &net.weights[3..6]);
        assert_eq!(back.output_weights().len(), 4);
    }

    proptest! {
        #[test]
        fn normalization_round_trip(offset in -1e3f64..1e3, scale in 1e-3f64..1e3, x in -1e4f64..1e4) {
            let a = Affine::new(offset, scale).unwrap();
            let back = a.denormalize(a.normalize(x));
            prop_assert!((back - x).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }
}
