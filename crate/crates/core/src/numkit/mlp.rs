//! Small fully connected networks with hand-written reverse-mode gradients.
//!
//! Parameters live in one canonical flat index space: layer by layer, each
//! layer's weight matrix row-major (`out × in`) followed by its bias. Subnetwork
//! selection, Jacobians and checkpoints all refer to that ordering.

use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{gemm, Matrix};
use super::rng::RngStream;
use crate::error::{shape_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation.
    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `out × in`, row-major.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    fn n_params(&self) -> usize {
        self.weights.rows() * self.weights.cols() + self.bias.len()
    }
}

/// Where a flat parameter index lives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamSlot {
    Weight { layer: usize, row: usize, col: usize },
    Bias { layer: usize, row: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    layers: Vec<Layer>,
}

/// Per-unit multipliers applied after the activation of one hidden layer.
///
/// Values are already rescaled (inverted dropout): kept units carry `1/(1-p)`.
#[derive(Clone, Debug, PartialEq)]
pub enum DropoutMask {
    /// One mask shared by every row of the batch (one sampled sub-network).
    Shared { layer: usize, scale: Vec<f64> },
    /// Independent mask per batch row, `rows × width`.
    PerRow { layer: usize, scale: Matrix },
}

impl DropoutMask {
    pub fn layer(&self) -> usize {
        match self {
            DropoutMask::Shared { layer, .. } | DropoutMask::PerRow { layer, .. } => *layer,
        }
    }

    pub fn width(&self) -> usize {
        match self {
            DropoutMask::Shared { scale, .. } => scale.len(),
            DropoutMask::PerRow { scale, .. } => scale.cols(),
        }
    }

    /// Samples a shared inverted-dropout mask.
    pub fn sample_shared(layer: usize, width: usize, rate: f64, rng: &mut RngStream) -> Self {
        DropoutMask::Shared {
            layer,
            scale: sample_mask_values(width, rate, rng),
        }
    }

    pub fn sample_per_row(layer: usize, rows: usize, width: usize, rate: f64, rng: &mut RngStream) -> Self {
        let data = sample_mask_values(rows * width, rate, rng);
        DropoutMask::PerRow {
            layer,
            scale: Matrix::from_vec(rows, width, data).expect("sized above"),
        }
    }

    fn apply(&self, m: &mut Matrix) -> Result<()> {
        match self {
            DropoutMask::Shared { scale, .. } => {
                if scale.len() != m.cols() {
                    return shape_err("dropout mask width does not match layer width");
                }
                for r in 0..m.rows() {
                    for (v, s) in m.row_mut(r).iter_mut().zip(scale) {
                        *v *= s;
                    }
                }
            }
            DropoutMask::PerRow { scale, .. } => {
                if scale.shape() != m.shape() {
                    return shape_err("per-row dropout mask shape does not match activations");
                }
                for (v, s) in m.as_mut_slice().iter_mut().zip(scale.as_slice()) {
                    *v *= s;
                }
            }
        }
        Ok(())
    }
}

fn sample_mask_values(n: usize, rate: f64, rng: &mut RngStream) -> Vec<f64> {
    if rate <= 0.0 {
        return vec![1.0; n];
    }
    let keep = 1.0 / (1.0 - rate);
    (0..n)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

/// Activations saved by a forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Input to each layer (after any dropout mask), `batch × in_l`.
    inputs: Vec<Matrix>,
    /// Pre-activations of each layer, `batch × out_l`.
    pre: Vec<Matrix>,
    output: Matrix,
    mask: Option<DropoutMask>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        &self.output
    }
}

/// Per-row Jacobians of selected outputs with respect to the parameters.
///
/// Row `p·k + r` of any gathered matrix is the gradient of output
/// `outputs[r]` at batch row `p`.
#[derive(Clone, Debug)]
pub struct BatchJacobian {
    rows: usize,
    n_outputs: usize,
    inputs: Vec<Matrix>,
    /// Per layer, `(rows·n_outputs) × out_l`.
    deltas: Vec<Matrix>,
    slots: Vec<ParamSlot>,
}

impl BatchJacobian {
    pub fn n_rows(&self) -> usize {
        self.rows * self.n_outputs
    }

    /// Jacobian columns for the given flat parameter indices.
    pub fn gather(&self, indices: &[usize]) -> Result<Matrix> {
        let mut out = Matrix::zeros(self.n_rows(), indices.len());
        let slots: Vec<ParamSlot> = indices
            .iter()
            .map(|&i| {
                self.slots
                    .get(i)
                    .copied()
                    .ok_or_else(|| Error::Shape(format!("parameter index {i} out of range")))
            })
            .collect::<Result<_>>()?;
        for p in 0..self.rows {
            for r in 0..self.n_outputs {
                let row = p * self.n_outputs + r;
                let out_row = out.row_mut(row);
                for (k, slot) in slots.iter().enumerate() {
                    out_row[k] = match *slot {
                        ParamSlot::Weight { layer, row: i, col: j } => {
                            self.deltas[layer][(row, i)] * self.inputs[layer][(p, j)]
                        }
                        ParamSlot::Bias { layer, row: i } => self.deltas[layer][(row, i)],
                    };
                }
            }
        }
        Ok(out)
    }

    /// Jacobian over every parameter.
    pub fn full(&self) -> Matrix {
        let all: Vec<usize> = (0..self.slots.len()).collect();
        self.gather(&all).expect("indices in range")
    }
}

impl MlpParams {
    /// Builds a network from explicit layers, checking that widths chain.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return shape_err("network needs at least one layer");
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.weights.rows() {
                return shape_err(format!("layer {l}: bias length differs from weight rows"));
            }
            if l > 0 && layers[l - 1].weights.rows() != layer.weights.cols() {
                return shape_err(format!("layer {l}: input width does not chain"));
            }
        }
        Ok(Self { layers })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn random(widths: &[usize], activations: &[Activation], rng: &mut RngStream) -> Result<Self> {
        let layers = Self::zeros(widths, activations)?
            .layers
            .into_iter()
            .map(|mut layer| {
                let (fan_out, fan_in) = layer.weights.shape();
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for w in layer.weights.as_mut_slice() {
                    *w = rng.random_range(-limit..limit);
                }
                layer
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn zeros(widths: &[usize], activations: &[Activation]) -> Result<Self> {
        if widths.len() < 2 {
            return shape_err("need at least input and output widths");
        }
        if activations.len() != widths.len() - 1 {
            return shape_err(format!(
                "{} activations for {} layers",
                activations.len(),
                widths.len() - 1
            ));
        }
        if widths.iter().any(|&w| w == 0) {
            return shape_err("layer widths must be positive");
        }
        let layers = widths
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| Layer {
                weights: Matrix::zeros(w[1], w[0]),
                bias: vec![0.0; w[1]],
                activation,
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].weights.cols()];
        w.extend(self.layers.iter().map(|l| l.weights.rows()));
        w
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weights.cols()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weights.rows())
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Layer::n_params).sum()
    }

    /// Offset of each layer's first parameter in the flat index space.
    pub fn layer_offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.layers.len());
        let mut acc = 0;
        for l in &self.layers {
            off.push(acc);
            acc += l.n_params();
        }
        off
    }

    pub fn slots(&self) -> Vec<ParamSlot> {
        let mut slots = Vec::with_capacity(self.n_params());
        for (layer, l) in self.layers.iter().enumerate() {
            let (rows, cols) = l.weights.shape();
            for row in 0..rows {
                for col in 0..cols {
                    slots.push(ParamSlot::Weight { layer, row, col });
                }
            }
            for row in 0..rows {
                slots.push(ParamSlot::Bias { layer, row });
            }
        }
        slots
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            v.extend_from_slice(l.weights.as_slice());
            v.extend_from_slice(&l.bias);
        }
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return shape_err(format!(
                "flat vector has {} entries, network has {}",
                flat.len(),
                self.n_params()
            ));
        }
        let mut i = 0;
        for l in &mut self.layers {
            let nw = l.weights.as_slice().len();
            l.weights.as_mut_slice().copy_from_slice(&flat[i..i + nw]);
            i += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[i..i + nb]);
            i += nb;
        }
        Ok(())
    }

    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        let mut p = self.clone();
        p.set_flat(flat)?;
        Ok(p)
    }

    pub fn sum_squares(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| {
                l.weights.as_slice().iter().map(|w| w * w).sum::<f64>() + l.bias.iter().map(|b| b * b).sum::<f64>()
            })
            .sum()
    }

    fn check_mask(&self, mask: Option<&DropoutMask>, rows: usize) -> Result<()> {
        if let Some(m) = mask {
            let layer = m.layer();
            if layer + 1 >= self.layers.len() {
                return shape_err(format!("dropout layer {layer} is not a hidden layer"));
            }
            if m.width() != self.layers[layer].weights.rows() {
                return shape_err(format!(
                    "mask width {} does not match hidden layer width {}",
                    m.width(),
                    self.layers[layer].weights.rows()
                ));
            }
            if let DropoutMask::PerRow { scale, .. } = m {
                if scale.rows() != rows {
                    return shape_err("per-row mask row count differs from batch");
                }
            }
        }
        Ok(())
    }

    /// Forward pass keeping the intermediates needed by [`MlpParams::backward`].
    pub fn forward_cached(&self, x: &Matrix, mask: Option<&DropoutMask>) -> Result<ForwardCache> {
        if x.cols() != self.input_width() {
            return shape_err(format!(
                "input has {} columns, network expects {}",
                x.cols(),
                self.input_width()
            ));
        }
        self.check_mask(mask, x.rows())?;
        let n = x.rows();
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let out_w = layer.weights.rows();
            let mut z = Matrix::zeros(n, out_w);
            for r in 0..n {
                z.row_mut(r).copy_from_slice(&layer.bias);
            }
            gemm(
                1.0,
                current.as_view(),
                layer.weights.as_view().t(),
                1.0,
                z.as_mut_slice(),
                out_w,
            );
            let mut a = z.clone();
            for v in a.as_mut_slice() {
                *v = layer.activation.apply(*v);
            }
            if let Some(m) = mask {
                if m.layer() == l {
                    m.apply(&mut a)?;
                }
            }
            inputs.push(current);
            pre.push(z);
            current = a;
        }
        Ok(ForwardCache {
            inputs,
            pre,
            output: current,
            mask: mask.cloned(),
        })
    }

    /// Reverse pass: gradient of `Σ upstream ⊙ output` in flat parameter order.
    pub fn backward(&self, cache: &ForwardCache, upstream: &Matrix) -> Result<Vec<f64>> {
        if upstream.shape() != cache.output.shape() {
            return shape_err(format!(
                "upstream gradient {:?} differs from output {:?}",
                upstream.shape(),
                cache.output.shape()
            ));
        }
        let n = upstream.rows();
        let offsets = self.layer_offsets();
        let mut grad = vec![0.0; self.n_params()];
        let mut d_act = upstream.clone();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let (out_w, in_w) = layer.weights.shape();
            let mut dz = d_act;
            for (g, z) in dz.as_mut_slice().iter_mut().zip(cache.pre[l].as_slice()) {
                *g *= layer.activation.derivative(*z);
            }
            let off = offsets[l];
            let (gw, gb) = grad[off..off + out_w * in_w + out_w].split_at_mut(out_w * in_w);
            gemm(1.0, dz.as_view().t(), cache.inputs[l].as_view(), 0.0, gw, in_w);
            for r in 0..n {
                for (b, d) in gb.iter_mut().zip(dz.row(r)) {
                    *b += d;
                }
            }
            if l == 0 {
                break;
            }
            let mut d_in = Matrix::zeros(n, in_w);
            gemm(
                1.0,
                dz.as_view(),
                layer.weights.as_view(),
                0.0,
                d_in.as_mut_slice(),
                in_w,
            );
            if let Some(m) = &cache.mask {
                if m.layer() == l - 1 {
                    m.apply(&mut d_in)?;
                }
            }
            d_act = d_in;
        }
        Ok(grad)
    }

    /// Jacobians of the selected outputs for every row of `x`.
    pub fn output_jacobian(&self, x: &Matrix, outputs: &[usize], mask: Option<&DropoutMask>) -> Result<BatchJacobian> {
        if let Some(&o) = outputs.iter().find(|&&o| o >= self.output_width()) {
            return shape_err(format!("output index {o} out of range"));
        }
        if matches!(mask, Some(DropoutMask::PerRow { .. })) {
            return shape_err("jacobians take a shared dropout mask");
        }
        let cache = self.forward_cached(x, mask)?;
        let n = x.rows();
        let k = outputs.len();
        let n_layers = self.layers.len();
        let mut deltas = vec![Matrix::zeros(0, 0); n_layers];
        let last_w = self.output_width();
        let mut d_act = Matrix::zeros(n * k, last_w);
        for p in 0..n {
            for (r, &o) in outputs.iter().enumerate() {
                d_act[(p * k + r, o)] = 1.0;
            }
        }
        for l in (0..n_layers).rev() {
            let layer = &self.layers[l];
            let in_w = layer.weights.cols();
            let mut dz = d_act;
            let out_w = layer.weights.rows();
            for p in 0..n {
                let z = cache.pre[l].row(p);
                for r in 0..k {
                    let row = dz.row_mut(p * k + r);
                    for (g, zv) in row.iter_mut().zip(z) {
                        *g *= layer.activation.derivative(*zv);
                    }
                }
            }
            debug_assert_eq!(dz.cols(), out_w);
            if l > 0 {
                let mut d_in = Matrix::zeros(n * k, in_w);
                gemm(
                    1.0,
                    dz.as_view(),
                    layer.weights.as_view(),
                    0.0,
                    d_in.as_mut_slice(),
                    in_w,
                );
                if let Some(m) = mask {
                    if m.layer() == l - 1 {
                        m.apply(&mut d_in)?;
                    }
                }
                d_act = d_in;
            } else {
                d_act = Matrix::zeros(0, 0);
            }
            deltas[l] = dz;
        }
        drop(d_act);
        Ok(BatchJacobian {
            rows: n,
            n_outputs: k,
            inputs: cache.inputs,
            deltas,
            slots: self.slots(),
        })
    }
}

/// Applies the network to a batch.
pub fn mlp_apply(params: &MlpParams, x: &Matrix, mask: Option<&DropoutMask>) -> Result<Matrix> {
    Ok(params.forward_cached(x, mask)?.output)
}

/// Gradient of `Σ upstream ⊙ f(x)` with respect to every parameter.
pub fn mlp_grads(params: &MlpParams, x: &Matrix, upstream: &Matrix, mask: Option<&DropoutMask>) -> Result<Vec<f64>> {
    let cache = params.forward_cached(x, mask)?;
    params.backward(&cache, upstream)
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    widths: Vec<usize>,
    activations: Vec<Activation>,
    count: usize,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    extra: serde_json::Value,
}

/// Writes a JSON header line followed by the flat parameters as little-endian `f64`.
pub fn write_checkpoint<W: Write>(mut w: W, params: &MlpParams, extra: serde_json::Value) -> Result<()> {
    let header = CheckpointHeader {
        widths: params.widths(),
        activations: params.activations(),
        count: params.n_params(),
        extra,
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for v in params.flat() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(mut r: R) -> Result<(MlpParams, serde_json::Value)> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: CheckpointHeader = serde_json::from_str(line.trim_end())?;
    let mut params = MlpParams::zeros(&header.widths, &header.activations)?;
    if params.n_params() != header.count {
        return shape_err(format!(
            "header count {} disagrees with widths ({} parameters)",
            header.count,
            params.n_params()
        ));
    }
    let mut bytes = vec![0u8; header.count * 8];
    r.read_exact(&mut bytes)?;
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    params.set_flat(&flat)?;
    Ok((params, header.extra))
}
