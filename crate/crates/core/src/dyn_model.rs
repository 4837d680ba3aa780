//! Gaussian dynamics network `p(s′|s,a,θ) = N(μ_θ(s,a), σ²_θ(s,a))` and its
//! MAP training under a zero-mean Gaussian prior of precision γ².
//!
//! The network predicts the normalized state change `Δs = s′ − s`; inputs and
//! targets are standardized with statistics of the training buffer.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::infogain::GaussianPrediction;
use crate::numkit::{Activation, DropoutMask, Matrix, MlpParams, RngStream};
use crate::pipeline::Transition;

pub const STD_FLOOR: f64 = 1e-8;
pub const DEFAULT_VAR_MIN: f64 = 1e-6;
pub const DEFAULT_VAR_MAX: f64 = 1e2;

/// Per-dimension standardization of inputs `(s, a)` and targets `Δs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub target_mean: Vec<f64>,
    pub target_std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(state_dim: usize, action_dim: usize) -> Self {
        Self {
            input_mean: vec![0.0; state_dim + action_dim],
            input_std: vec![1.0; state_dim + action_dim],
            target_mean: vec![0.0; state_dim],
            target_std: vec![1.0; state_dim],
        }
    }

    pub fn normalize_input(&self, s: &[f64], a: &[f64], out: &mut [f64]) {
        for (i, v) in s.iter().chain(a).enumerate() {
            out[i] = (v - self.input_mean[i]) / self.input_std[i];
        }
    }

    pub fn denormalize_input(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, v)| v * self.input_std[i] + self.input_mean[i])
            .collect()
    }

    pub fn normalize_target(&self, delta: &[f64], out: &mut [f64]) {
        for (i, v) in delta.iter().enumerate() {
            out[i] = (v - self.target_mean[i]) / self.target_std[i];
        }
    }

    pub fn denormalize_target(&self, t: &[f64]) -> Vec<f64> {
        t.iter()
            .enumerate()
            .map(|(i, v)| v * self.target_std[i] + self.target_mean[i])
            .collect()
    }
}

fn mean_std(rows: impl Iterator<Item = Vec<f64>> + Clone, dim: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; dim];
    for r in rows.clone() {
        for (m, v) in mean.iter_mut().zip(&r) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0.0; dim];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(&r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var.into_iter().map(|v| (v / n as f64).sqrt().max(STD_FLOOR)).collect();
    (mean, std)
}

/// Sample statistics of the buffer (population standard deviation, floored).
pub fn fit_normalizer(transitions: &[Transition]) -> Result<Normalizer> {
    let first = transitions
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot fit a normalizer to an empty buffer".into()))?;
    let (sd, ad) = (first.s.len(), first.a.len());
    let n = transitions.len();
    let inputs = transitions.iter().map(|t| {
        let mut v = t.s.clone();
        v.extend_from_slice(&t.a);
        v
    });
    let (input_mean, input_std) = mean_std(inputs, sd + ad, n);
    let targets = transitions
        .iter()
        .map(|t| t.s_next.iter().zip(&t.s).map(|(a, b)| a - b).collect::<Vec<_>>());
    let (target_mean, target_std) = mean_std(targets, sd, n);
    Ok(Normalizer {
        input_mean,
        input_std,
        target_mean,
        target_std,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelArch {
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub activation: Activation,
}

impl Default for ModelArch {
    fn default() -> Self {
        Self {
            hidden_width: 64,
            hidden_layers: 5,
            activation: Activation::Tanh,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropoutSpec {
    /// Index of the hidden layer whose activations are masked.
    pub layer: usize,
    pub rate: f64,
}

/// Everything needed to build a freshly initialized dynamics network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    pub arch: ModelArch,
    /// Dropout rate on the middle hidden layer; 0 disables dropout.
    pub dropout_rate: f64,
    pub var_min: f64,
    pub var_max: f64,
}

impl ModelSpec {
    pub fn new(state_dim: usize, action_dim: usize, arch: ModelArch) -> Self {
        Self {
            state_dim,
            action_dim,
            arch,
            dropout_rate: 0.0,
            var_min: DEFAULT_VAR_MIN,
            var_max: DEFAULT_VAR_MAX,
        }
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = rate;
        self
    }
}

/// Batched predictive moments, both in state units.
#[derive(Clone, Debug)]
pub struct BatchPrediction {
    pub mean: Matrix,
    pub var: Matrix,
}

impl BatchPrediction {
    pub fn row(&self, r: usize) -> Result<GaussianPrediction> {
        GaussianPrediction::diagonal(self.mean.row(r).to_vec(), self.var.row(r).to_vec())
    }
}

/// Dynamics network with a mean head and a log-variance head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMLP {
    pub params: MlpParams,
    pub state_dim: usize,
    pub action_dim: usize,
    pub dropout: Option<DropoutSpec>,
    pub normalizer: Normalizer,
    pub var_min: f64,
    pub var_max: f64,
}

impl GaussianMLP {
    pub fn new(
        params: MlpParams,
        state_dim: usize,
        action_dim: usize,
        normalizer: Normalizer,
        dropout: Option<DropoutSpec>,
    ) -> Result<Self> {
        if params.input_width() != state_dim + action_dim {
            return shape_err(format!(
                "network input width {} != |S|+|A| = {}",
                params.input_width(),
                state_dim + action_dim
            ));
        }
        if params.output_width() != 2 * state_dim {
            return shape_err(format!(
                "network output width {} != 2|S| = {}",
                params.output_width(),
                2 * state_dim
            ));
        }
        if normalizer.input_mean.len() != state_dim + action_dim || normalizer.target_mean.len() != state_dim {
            return shape_err("normalizer dimensions do not match the model");
        }
        if let Some(d) = dropout {
            if !(0.0..1.0).contains(&d.rate) {
                return Err(Error::InvalidArgument(format!("dropout rate {} not in [0, 1)", d.rate)));
            }
            if d.layer + 1 >= params.layers().len() {
                return shape_err(format!("dropout layer {} is not hidden", d.layer));
            }
        }
        Ok(Self {
            params,
            state_dim,
            action_dim,
            dropout,
            normalizer,
            var_min: DEFAULT_VAR_MIN,
            var_max: DEFAULT_VAR_MAX,
        })
    }

    pub fn random(spec: &ModelSpec, normalizer: Normalizer, rng: &mut RngStream) -> Result<Self> {
        let arch = &spec.arch;
        let mut widths = vec![spec.state_dim + spec.action_dim];
        widths.extend(std::iter::repeat_n(arch.hidden_width, arch.hidden_layers));
        widths.push(2 * spec.state_dim);
        let mut acts = vec![arch.activation; arch.hidden_layers];
        acts.push(Activation::Identity);
        let params = MlpParams::random(&widths, &acts, rng)?;
        let dropout = if spec.dropout_rate > 0.0 {
            if arch.hidden_layers == 0 {
                return Err(Error::InvalidArgument("dropout needs a hidden layer".into()));
            }
            Some(DropoutSpec {
                layer: arch.hidden_layers / 2,
                rate: spec.dropout_rate,
            })
        } else {
            None
        };
        let mut m = Self::new(params, spec.state_dim, spec.action_dim, normalizer, dropout)?;
        m.var_min = spec.var_min;
        m.var_max = spec.var_max;
        Ok(m)
    }

    pub fn n_params(&self) -> usize {
        self.params.n_params()
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout.map_or(0.0, |d| d.rate)
    }

    /// Draws one shared inverted-dropout mask (`None` without dropout).
    pub fn sample_mask(&self, rng: &mut RngStream) -> Option<DropoutMask> {
        let d = self.dropout?;
        let width = self.params.layers()[d.layer].weights.rows();
        Some(DropoutMask::sample_shared(d.layer, width, d.rate, rng))
    }

    /// Normalized log-variance bounds for output dimension `d`.
    pub(crate) fn log_var_bounds(&self, d: usize) -> (f64, f64) {
        let two_log_std = 2.0 * self.normalizer.target_std[d].ln();
        (self.var_min.ln() - two_log_std, self.var_max.ln() - two_log_std)
    }

    /// Standardized network inputs for a batch of `(s, a)`.
    pub fn input_matrix(&self, states: &Matrix, actions: &Matrix) -> Result<Matrix> {
        if states.cols() != self.state_dim || actions.cols() != self.action_dim {
            return shape_err(format!(
                "expected |S|={} and |A|={}, got {} and {}",
                self.state_dim,
                self.action_dim,
                states.cols(),
                actions.cols()
            ));
        }
        if states.rows() != actions.rows() {
            return shape_err("state and action batches have different lengths");
        }
        let w = self.state_dim + self.action_dim;
        let mut x = Matrix::zeros(states.rows(), w);
        for r in 0..states.rows() {
            self.normalizer
                .normalize_input(states.row(r), actions.row(r), x.row_mut(r));
        }
        Ok(x)
    }

    /// Predictive means and variances for a batch, optionally under a dropout mask.
    pub fn predict_batch(
        &self,
        states: &Matrix,
        actions: &Matrix,
        mask: Option<&DropoutMask>,
    ) -> Result<BatchPrediction> {
        let x = self.input_matrix(states, actions)?;
        let out = crate::numkit::mlp_apply(&self.params, &x, mask)?;
        self.decode(states, &out)
    }

    /// Maps raw network outputs to state-unit means and clamped variances.
    pub(crate) fn decode(&self, states: &Matrix, out: &Matrix) -> Result<BatchPrediction> {
        let sd = self.state_dim;
        let n = out.rows();
        let mut mean = Matrix::zeros(n, sd);
        let mut var = Matrix::zeros(n, sd);
        for r in 0..n {
            let o = out.row(r);
            if o.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric("non-finite network output".into()));
            }
            let s = states.row(r);
            for d in 0..sd {
                let tstd = self.normalizer.target_std[d];
                mean[(r, d)] = s[d] + o[d] * tstd + self.normalizer.target_mean[d];
                var[(r, d)] = ((o[sd + d]).exp() * tstd * tstd).clamp(self.var_min, self.var_max);
            }
        }
        Ok(BatchPrediction { mean, var })
    }

    /// Deterministic prediction (dropout inactive).
    pub fn predict(&self, s: &[f64], a: &[f64]) -> Result<GaussianPrediction> {
        let b = self.predict_batch(&Matrix::row_vector(s), &Matrix::row_vector(a), None)?;
        b.row(0)
    }

    /// Standardized inputs and `Δs` targets for a set of transitions.
    pub(crate) fn normalized_data(&self, batch: &[Transition]) -> Result<(Matrix, Matrix)> {
        let (sd, ad) = (self.state_dim, self.action_dim);
        let mut x = Matrix::zeros(batch.len(), sd + ad);
        let mut t = Matrix::zeros(batch.len(), sd);
        let mut delta = vec![0.0; sd];
        for (r, tr) in batch.iter().enumerate() {
            if tr.s.len() != sd || tr.a.len() != ad || tr.s_next.len() != sd {
                return shape_err(format!("transition {r} has the wrong dimensions"));
            }
            self.normalizer.normalize_input(&tr.s, &tr.a, x.row_mut(r));
            for d in 0..sd {
                delta[d] = tr.s_next[d] - tr.s[d];
            }
            self.normalizer.normalize_target(&delta, t.row_mut(r));
        }
        Ok((x, t))
    }

    /// Mean NLL (normalized target space) plus `γ²/(2·prior_n)·‖θ‖²`, with gradient.
    pub(crate) fn loss_and_grad(
        &self,
        x: &Matrix,
        targets: &Matrix,
        mask: Option<&DropoutMask>,
        gamma2: f64,
        prior_n: f64,
    ) -> Result<(f64, Vec<f64>)> {
        let sd = self.state_dim;
        let n = x.rows();
        let cache = self.params.forward_cached(x, mask)?;
        let out = cache.output();
        let mut upstream = Matrix::zeros(n, 2 * sd);
        let half_log_2pi = 0.5 * (2.0 * PI).ln();
        let bounds: Vec<(f64, f64)> = (0..sd).map(|d| self.log_var_bounds(d)).collect();
        let mut nll = 0.0;
        for r in 0..n {
            let o = out.row(r);
            let t = targets.row(r);
            let up = upstream.row_mut(r);
            for d in 0..sd {
                let (lo, hi) = bounds[d];
                let raw = o[sd + d];
                let lv = raw.clamp(lo, hi);
                let inv_var = (-lv).exp();
                let err = t[d] - o[d];
                nll += half_log_2pi + 0.5 * lv + 0.5 * err * err * inv_var;
                up[d] = -err * inv_var / n as f64;
                up[sd + d] = if raw > lo && raw < hi {
                    (0.5 - 0.5 * err * err * inv_var) / n as f64
                } else {
                    0.0
                };
            }
        }
        let mut loss = nll / n as f64;
        let mut grad = self.params.backward(&cache, &upstream)?;
        if gamma2 > 0.0 {
            let k = gamma2 / prior_n;
            loss += 0.5 * k * self.params.sum_squares();
            for (g, p) in grad.iter_mut().zip(self.params.flat()) {
                *g += k * p;
            }
        }
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {loss}")));
        }
        Ok((loss, grad))
    }
}

/// Negative log-likelihood of `batch` under the model plus the Gaussian prior
/// term, with its exact gradient in flat parameter order. The prior is scaled
/// by the batch size so the value is the per-datum MAP objective.
pub fn nll_map_loss(model: &GaussianMLP, batch: &[Transition], gamma2: f64) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let (x, t) = model.normalized_data(batch)?;
    model.loss_and_grad(&x, &t, None, gamma2, batch.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Prior precision γ² of the weights.
    pub gamma2: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma2: 1.0,
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma2 >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "gamma2 must be >= 0, got {}",
                self.gamma2
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean minibatch loss of each epoch.
    pub loss_trace: Vec<f64>,
}

/// Starting point of [`train_map`].
#[derive(Clone, Copy, Debug)]
pub enum ModelInit<'a> {
    Fresh(&'a ModelSpec),
    /// Continue from an existing network; the normalizer is refitted to the new buffer.
    Warm(&'a GaussianMLP),
}

/// Adam with `β₁ = 0.9`, `β₂ = 0.999`.
struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * g;
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + Self::EPS);
        }
    }
}

fn gather_rows(m: &Matrix, idx: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(idx.len(), m.cols());
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).copy_from_slice(m.row(i));
    }
    out
}

/// Minibatch Adam on the MAP objective. The prior term is scaled by the buffer
/// size so each step is an unbiased estimate of the full-data objective.
pub fn train_map(buffer: &[Transition], cfg: &TrainConfig, init: ModelInit<'_>) -> Result<(GaussianMLP, TrainReport)> {
    cfg.validate()?;
    if buffer.len() < cfg.batch_size {
        return Err(Error::InvalidArgument(format!(
            "buffer of {} transitions is smaller than batch size {}",
            buffer.len(),
            cfg.batch_size
        )));
    }
    let rng = RngStream::new(cfg.seed, 0x7a11);
    let normalizer = fit_normalizer(buffer)?;
    let mut model = match init {
        ModelInit::Fresh(spec) => {
            let mut init_rng = rng.split(1);
            GaussianMLP::random(spec, normalizer, &mut init_rng)?
        }
        ModelInit::Warm(m) => {
            let mut m = m.clone();
            m.normalizer = normalizer;
            m
        }
    };
    let mut report = TrainReport::default();
    if cfg.epochs == 0 {
        return Ok((model, report));
    }
    let (x, t) = model.normalized_data(buffer)?;
    let n = buffer.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut flat = model.params.flat();
    let mut adam = Adam::new(flat.len(), cfg.learning_rate);
    let mut shuffle_rng = rng.split(2);
    let mut mask_rng = rng.split(3);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let xb = gather_rows(&x, chunk);
            let tb = gather_rows(&t, chunk);
            let mask = model.dropout.map(|d| {
                let width = model.params.layers()[d.layer].weights.rows();
                DropoutMask::sample_per_row(d.layer, chunk.len(), width, d.rate, &mut mask_rng)
            });
            let (loss, grad) = match model.loss_and_grad(&xb, &tb, mask.as_ref(), cfg.gamma2, n as f64) {
                Ok(v) => v,
                Err(Error::Numeric(_)) => return Err(Error::Diverged { epoch, loss: f64::NAN }),
                Err(e) => return Err(e),
            };
            adam.step(&mut flat, &grad);
            model.params.set_flat(&flat)?;
            total += loss;
            batches += 1;
        }
        let avg = total / batches as f64;
        if !avg.is_finite() || flat.iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged { epoch, loss: avg });
        }
        report.loss_trace.push(avg);
    }
    Ok((model, report))
}
