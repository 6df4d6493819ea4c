//! Forward and backward passes for the layer types used by the reference models.
//!
//! Everything runs in `f64`. Parameters live in one flat buffer owned by
//! [`Model`]; each layer reads its own contiguous slice. Masked entries are
//! forced to zero before every forward pass and zeroed in every gradient.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::tensor::Tensor;

/// Samples per chunk when sweeping a whole dataset.
const SWEEP_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layer {
    /// `outputs x inputs` weights (row-major) followed by `outputs` biases.
    Dense { inputs: usize, outputs: usize },
    /// 3x3 convolution, stride 1, zero padding 1. Weights `(out, in, 3, 3)` then biases.
    Conv3x3 {
        in_channels: usize,
        out_channels: usize,
        height: usize,
        width: usize,
    },
    Relu { len: usize },
    /// Non-overlapping 2x2 average pooling; a trailing odd row/column is dropped.
    MeanPool2 {
        channels: usize,
        height: usize,
        width: usize,
    },
    GlobalMeanPool {
        channels: usize,
        height: usize,
        width: usize,
    },
}

impl Layer {
    pub fn weight_count(&self) -> usize {
        match *self {
            Layer::Dense { inputs, outputs } => inputs * outputs,
            Layer::Conv3x3 {
                in_channels,
                out_channels,
                ..
            } => out_channels * in_channels * 9,
            _ => 0,
        }
    }

    pub fn bias_count(&self) -> usize {
        match *self {
            Layer::Dense { outputs, .. } => outputs,
            Layer::Conv3x3 { out_channels, .. } => out_channels,
            _ => 0,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + self.bias_count()
    }

    /// Number of inputs feeding each output unit; zero for parameter-free layers.
    pub fn fan_in(&self) -> usize {
        match *self {
            Layer::Dense { inputs, .. } => inputs,
            Layer::Conv3x3 { in_channels, .. } => in_channels * 9,
            _ => 0,
        }
    }

    /// Per-sample input length.
    pub fn input_len(&self) -> usize {
        match *self {
            Layer::Dense { inputs, .. } => inputs,
            Layer::Conv3x3 {
                in_channels,
                height,
                width,
                ..
            } => in_channels * height * width,
            Layer::Relu { len } => len,
            Layer::MeanPool2 {
                channels,
                height,
                width,
            }
            | Layer::GlobalMeanPool {
                channels,
                height,
                width,
            } => channels * height * width,
        }
    }

    /// Per-sample output length.
    pub fn output_len(&self) -> usize {
        match *self {
            Layer::Dense { outputs, .. } => outputs,
            Layer::Conv3x3 {
                out_channels,
                height,
                width,
                ..
            } => out_channels * height * width,
            Layer::Relu { len } => len,
            Layer::MeanPool2 {
                channels,
                height,
                width,
            } => channels * (height / 2) * (width / 2),
            Layer::GlobalMeanPool { channels, .. } => channels,
        }
    }

    fn forward(&self, params: &[f64], input: &[f64], batch: usize) -> Vec<f64> {
        let in_len = self.input_len();
        let out_len = self.output_len();
        let mut out = vec![0.0; batch * out_len];
        match *self {
            Layer::Dense { inputs, outputs } => {
                let (w, bias) = params.split_at(inputs * outputs);
                for (x, y) in input.chunks_exact(inputs).zip(out.chunks_exact_mut(outputs)) {
                    for ((yo, row), b) in y.iter_mut().zip(w.chunks_exact(inputs)).zip(bias) {
                        *yo = b + dot(row, x);
                    }
                }
            }
            Layer::Conv3x3 {
                in_channels,
                out_channels,
                height,
                width,
            } => {
                let (w, bias) = params.split_at(out_channels * in_channels * 9);
                let plane = height * width;
                for (x, y) in input.chunks_exact(in_len).zip(out.chunks_exact_mut(out_len)) {
                    for o in 0..out_channels {
                        let yo = &mut y[o * plane..(o + 1) * plane];
                        yo.fill(bias[o]);
                        for c in 0..in_channels {
                            let xc = &x[c * plane..(c + 1) * plane];
                            let k = &w[(o * in_channels + c) * 9..(o * in_channels + c + 1) * 9];
                            conv_accumulate(xc, k, yo, height, width);
                        }
                    }
                }
            }
            Layer::Relu { .. } => {
                for (y, x) in out.iter_mut().zip(input) {
                    *y = x.max(0.0);
                }
            }
            Layer::MeanPool2 {
                channels,
                height,
                width,
            } => {
                let (oh, ow) = (height / 2, width / 2);
                for (x, y) in input.chunks_exact(in_len).zip(out.chunks_exact_mut(out_len)) {
                    for c in 0..channels {
                        for py in 0..oh {
                            for px in 0..ow {
                                let base = c * height * width + 2 * py * width + 2 * px;
                                let s = x[base] + x[base + 1] + x[base + width] + x[base + width + 1];
                                y[c * oh * ow + py * ow + px] = 0.25 * s;
                            }
                        }
                    }
                }
            }
            Layer::GlobalMeanPool {
                channels,
                height,
                width,
            } => {
                let plane = height * width;
                for (x, y) in input.chunks_exact(in_len).zip(out.chunks_exact_mut(out_len)) {
                    for c in 0..channels {
                        y[c] = x[c * plane..(c + 1) * plane].iter().sum::<f64>() / plane as f64;
                    }
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to the layer input (skipped when `need_input_grad` is false).
    fn backward(
        &self,
        params: &[f64],
        input: &[f64],
        out_grad: &[f64],
        batch: usize,
        grad: &mut [f64],
        need_input_grad: bool,
    ) -> Option<Vec<f64>> {
        let in_len = self.input_len();
        let out_len = self.output_len();
        let mut in_grad = need_input_grad.then(|| vec![0.0; batch * in_len]);
        match *self {
            Layer::Dense { inputs, outputs } => {
                let (w, _) = params.split_at(inputs * outputs);
                let (gw, gb) = grad.split_at_mut(inputs * outputs);
                for b in 0..batch {
                    let x = &input[b * inputs..(b + 1) * inputs];
                    let dy = &out_grad[b * outputs..(b + 1) * outputs];
                    for (o, &d) in dy.iter().enumerate() {
                        if d == 0.0 {
                            continue;
                        }
                        gb[o] += d;
                        axpy(d, x, &mut gw[o * inputs..(o + 1) * inputs]);
                        if let Some(dx) = in_grad.as_mut() {
                            axpy(d, &w[o * inputs..(o + 1) * inputs], &mut dx[b * inputs..(b + 1) * inputs]);
                        }
                    }
                }
            }
            Layer::Conv3x3 {
                in_channels,
                out_channels,
                height,
                width,
            } => {
                let plane = height * width;
                let (w, _) = params.split_at(out_channels * in_channels * 9);
                let (gw, gb) = grad.split_at_mut(out_channels * in_channels * 9);
                for b in 0..batch {
                    let x = &input[b * in_len..(b + 1) * in_len];
                    let dy = &out_grad[b * out_len..(b + 1) * out_len];
                    for o in 0..out_channels {
                        let dyo = &dy[o * plane..(o + 1) * plane];
                        gb[o] += dyo.iter().sum::<f64>();
                        for c in 0..in_channels {
                            let xc = &x[c * plane..(c + 1) * plane];
                            let kidx = (o * in_channels + c) * 9;
                            conv_weight_grad(xc, dyo, &mut gw[kidx..kidx + 9], height, width);
                            if let Some(dx) = in_grad.as_mut() {
                                let dxc = &mut dx[b * in_len + c * plane..b * in_len + (c + 1) * plane];
                                conv_input_grad(&w[kidx..kidx + 9], dyo, dxc, height, width);
                            }
                        }
                    }
                }
            }
            Layer::Relu { .. } => {
                if let Some(dx) = in_grad.as_mut() {
                    for ((g, &x), &d) in dx.iter_mut().zip(input).zip(out_grad) {
                        *g = if x > 0.0 { d } else { 0.0 };
                    }
                }
            }
            Layer::MeanPool2 {
                channels,
                height,
                width,
            } => {
                if let Some(dx) = in_grad.as_mut() {
                    let (oh, ow) = (height / 2, width / 2);
                    for b in 0..batch {
                        for c in 0..channels {
                            for py in 0..oh {
                                for px in 0..ow {
                                    let d = 0.25 * out_grad[b * out_len + c * oh * ow + py * ow + px];
                                    let base = b * in_len + c * height * width + 2 * py * width + 2 * px;
                                    dx[base] = d;
                                    dx[base + 1] = d;
                                    dx[base + width] = d;
                                    dx[base + width + 1] = d;
                                }
                            }
                        }
                    }
                }
            }
            Layer::GlobalMeanPool {
                channels,
                height,
                width,
            } => {
                if let Some(dx) = in_grad.as_mut() {
                    let plane = height * width;
                    for b in 0..batch {
                        for c in 0..channels {
                            let d = out_grad[b * out_len + c] / plane as f64;
                            dx[b * in_len + c * plane..b * in_len + (c + 1) * plane].fill(d);
                        }
                    }
                }
            }
        }
        in_grad
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Valid output range for kernel offset `k` in {0,1,2} along an axis of length `n`.
#[inline]
fn tap_range(k: usize, n: usize) -> Range<usize> {
    match k {
        0 => 1..n,
        1 => 0..n,
        _ => 0..n.saturating_sub(1),
    }
}

fn conv_accumulate(x: &[f64], k: &[f64], y: &mut [f64], h: usize, w: usize) {
    for ky in 0..3 {
        for kx in 0..3 {
            let kv = k[ky * 3 + kx];
            if kv == 0.0 {
                continue;
            }
            for oy in tap_range(ky, h) {
                let iy = oy + ky - 1;
                let xr = tap_range(kx, w);
                let (start, end) = (xr.start, xr.end);
                let src = &x[iy * w + start + kx - 1..iy * w + end + kx - 1];
                axpy(kv, src, &mut y[oy * w + start..oy * w + end]);
            }
        }
    }
}

fn conv_weight_grad(x: &[f64], dy: &[f64], gk: &mut [f64], h: usize, w: usize) {
    for ky in 0..3 {
        for kx in 0..3 {
            let mut acc = 0.0;
            for oy in tap_range(ky, h) {
                let iy = oy + ky - 1;
                let xr = tap_range(kx, w);
                let (start, end) = (xr.start, xr.end);
                acc += dot(
                    &x[iy * w + start + kx - 1..iy * w + end + kx - 1],
                    &dy[oy * w + start..oy * w + end],
                );
            }
            gk[ky * 3 + kx] += acc;
        }
    }
}

fn conv_input_grad(k: &[f64], dy: &[f64], dx: &mut [f64], h: usize, w: usize) {
    for ky in 0..3 {
        for kx in 0..3 {
            let kv = k[ky * 3 + kx];
            if kv == 0.0 {
                continue;
            }
            for oy in tap_range(ky, h) {
                let iy = oy + ky - 1;
                let xr = tap_range(kx, w);
                let (start, end) = (xr.start, xr.end);
                axpy(
                    kv,
                    &dy[oy * w + start..oy * w + end],
                    &mut dx[iy * w + start + kx - 1..iy * w + end + kx - 1],
                );
            }
        }
    }
}

/// Activations saved by [`forward`] for the matching [`backward`] call.
#[derive(Debug)]
pub struct BatchCache {
    model_id: u64,
    generation: u64,
    batch: usize,
    layer_inputs: Vec<Vec<f64>>,
    logits: Tensor,
}

impl BatchCache {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Gradient with the same flat layout as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    flat: Vec<f64>,
    layout: Vec<Range<usize>>,
}

impl Gradient {
    pub fn zeros_like(model: &Model) -> Self {
        Gradient {
            flat: vec![0.0; model.param_count()],
            layout: model.layer_ranges().to_vec(),
        }
    }

    pub fn from_flat(model: &Model, flat: Vec<f64>) -> Result<Self> {
        if flat.len() != model.param_count() {
            return Err(Error::Shape {
                expected: vec![model.param_count()],
                got: vec![flat.len()],
            });
        }
        Ok(Gradient {
            flat,
            layout: model.layer_ranges().to_vec(),
        })
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.flat
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    /// View of one layer's slice (empty for parameter-free layers).
    pub fn layer(&self, index: usize) -> &[f64] {
        &self.flat[self.layout[index].clone()]
    }

    pub fn norm(&self) -> f64 {
        self.flat.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

pub fn forward(model: &Model, inputs: &Tensor) -> Result<(Tensor, BatchCache)> {
    let batch = inputs.batch();
    if batch == 0 {
        return Err(Error::config("forward needs a batch of at least one sample"));
    }
    if inputs.sample_shape() != model.input_shape() {
        return Err(Error::Shape {
            expected: model.input_shape().to_vec(),
            got: inputs.sample_shape().to_vec(),
        });
    }
    let params = model.effective_params();
    let ranges = model.layer_ranges();
    let mut layer_inputs = Vec::with_capacity(model.layers().len());
    let mut act = inputs.data().to_vec();
    for (layer, range) in model.layers().iter().zip(ranges) {
        let out = layer.forward(&params[range.clone()], &act, batch);
        layer_inputs.push(std::mem::replace(&mut act, out));
    }
    if !act.iter().all(|v| v.is_finite()) {
        return Err(Error::NumericOverflow("forward"));
    }
    let logits = Tensor::new(vec![batch, model.num_classes()], act)?;
    let cache = BatchCache {
        model_id: model.id(),
        generation: model.generation(),
        batch,
        layer_inputs,
        logits: logits.clone(),
    };
    Ok((logits, cache))
}

/// Mean softmax cross-entropy and argmax error rate (ties go to the lowest class).
pub fn loss_and_error(logits: &Tensor, targets: &[usize]) -> Result<(f64, f64)> {
    let n = logits.batch();
    if n != targets.len() || n == 0 {
        return Err(Error::Shape {
            expected: vec![n],
            got: vec![targets.len()],
        });
    }
    let classes = logits.sample_len();
    let mut loss = 0.0;
    let mut wrong = 0usize;
    for (row, &t) in logits.data().chunks_exact(classes).zip(targets) {
        if t >= classes {
            return Err(Error::config(format!("label {t} out of range for {classes} classes")));
        }
        let (argmax, max) = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
        if !max.is_finite() {
            return Err(Error::NumericOverflow("loss"));
        }
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[t];
        if argmax != t {
            wrong += 1;
        }
    }
    let loss = loss / n as f64;
    if !loss.is_finite() {
        return Err(Error::NumericOverflow("loss"));
    }
    Ok((loss.max(0.0), wrong as f64 / n as f64))
}

/// Mean cross-entropy gradient over the batch stored in `cache`.
pub fn backward(model: &Model, cache: BatchCache, targets: &[usize]) -> Result<Gradient> {
    if cache.model_id != model.id() || cache.generation != model.generation() {
        return Err(Error::StaleCache);
    }
    if targets.len() != cache.batch {
        return Err(Error::Shape {
            expected: vec![cache.batch],
            got: vec![targets.len()],
        });
    }
    let batch = cache.batch;
    let classes = model.num_classes();
    let mut delta = cache.logits.into_data();
    let inv_n = 1.0 / batch as f64;
    for (row, &t) in delta.chunks_exact_mut(classes).zip(targets) {
        if t >= classes {
            return Err(Error::config(format!("label {t} out of range for {classes} classes")));
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v *= inv_n / z;
        }
        row[t] -= inv_n;
    }

    let params = model.effective_params();
    let ranges = model.layer_ranges();
    let mut grad = Gradient::zeros_like(model);
    // Input gradients are not needed below the first parameterised layer.
    let first_param = model.layers().iter().position(|l| l.param_count() > 0).unwrap_or(0);
    for (i, layer) in model.layers().iter().enumerate().rev() {
        let range = ranges[i].clone();
        let need = i > first_param;
        let next = layer.backward(
            &params[range.clone()],
            &cache.layer_inputs[i],
            &delta,
            batch,
            &mut grad.flat[range],
            need,
        );
        match next {
            Some(d) => delta = d,
            None => break,
        }
    }
    for (g, &keep) in grad.flat.iter_mut().zip(model.mask().bits()) {
        if !keep {
            *g = 0.0;
        }
    }
    if !grad.flat.iter().all(|g| g.is_finite()) {
        return Err(Error::NumericOverflow("backward"));
    }
    Ok(grad)
}

/// Forward, loss and backward on one batch.
pub fn loss_and_gradient(model: &Model, inputs: &Tensor, targets: &[usize]) -> Result<(f64, f64, Gradient)> {
    let (logits, cache) = forward(model, inputs)?;
    let (loss, err) = loss_and_error(&logits, targets)?;
    let grad = backward(model, cache, targets)?;
    Ok((loss, err, grad))
}

/// Exact mean loss and gradient over every example of `dataset`.
pub fn full_loss_and_gradient(model: &Model, dataset: &Dataset) -> Result<(f64, Gradient)> {
    let n = dataset.len();
    if n == 0 {
        return Err(Error::InsufficientData("full gradient over an empty dataset".into()));
    }
    let mut total = Gradient::zeros_like(model);
    let mut loss = 0.0;
    let indices: Vec<usize> = (0..n).collect();
    for chunk in indices.chunks(SWEEP_CHUNK) {
        let x = dataset.inputs().gather(chunk);
        let y: Vec<usize> = chunk.iter().map(|&i| dataset.labels()[i]).collect();
        let (l, _, g) = loss_and_gradient(model, &x, &y)?;
        let w = chunk.len() as f64 / n as f64;
        loss += w * l;
        axpy(w, g.flat(), &mut total.flat);
    }
    Ok((loss, total))
}

pub fn full_gradient(model: &Model, dataset: &Dataset) -> Result<Gradient> {
    full_loss_and_gradient(model, dataset).map(|(_, g)| g)
}

/// Mean loss and error rate over a whole dataset (no gradients).
pub fn evaluate(model: &Model, dataset: &Dataset) -> Result<(f64, f64)> {
    let n = dataset.len();
    if n == 0 {
        return Err(Error::InsufficientData("evaluation over an empty dataset".into()));
    }
    let mut loss = 0.0;
    let mut wrong = 0.0;
    let indices: Vec<usize> = (0..n).collect();
    for chunk in indices.chunks(SWEEP_CHUNK) {
        let x = dataset.inputs().gather(chunk);
        let y: Vec<usize> = chunk.iter().map(|&i| dataset.labels()[i]).collect();
        let (logits, _) = forward(model, &x)?;
        let (l, e) = loss_and_error(&logits, &y)?;
        let w = chunk.len() as f64;
        loss += w * l;
        wrong += w * e;
    }
    Ok((loss / n as f64, wrong / n as f64))
}
