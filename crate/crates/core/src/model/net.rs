//! Forward and backward passes of the sequential 1-D CNN.
//!
//! Parameters live in one flat `f64` vector laid out by
//! [`ArchitectureSpec::param_slots`]: per layer, weights then biases. Conv
//! weights are indexed `[out][in][k]`, dense weights `[out][in]`. Activations
//! are channel-major `(channels, len)` buffers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::arch::{ArchitectureSpec, LayerSpec, ParamSlot, Shape};
use crate::error::{Error, Result};
use crate::simgen::derive_seed;

/// Whether dropout samples masks (training) or passes through (inference).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Masks drawn from a stream seeded with this value.
    Train {
        dropout_seed: u64,
    },
}

/// A validated architecture with its parameter layout resolved.
#[derive(Debug, Clone)]
pub struct Network {
    spec: ArchitectureSpec,
    shapes: Vec<(Shape, Shape)>,
    /// `slot_of[layer]` indexes into `slots` for parameterized layers.
    slot_of: Vec<Option<usize>>,
    slots: Vec<ParamSlot>,
    n_params: usize,
}

/// Per-layer inputs (and dropout masks) kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    inputs: Vec<Vec<f64>>,
    masks: Vec<Option<Vec<f64>>>,
    output: f64,
}

impl Trace {
    pub fn output(&self) -> f64 {
        self.output
    }

    /// Activation entering layer `i`.
    pub fn input_of(&self, i: usize) -> &[f64] {
        &self.inputs[i]
    }
}

impl Network {
    pub fn new(spec: &ArchitectureSpec) -> Result<Self> {
        let shapes = spec.shapes()?;
        let slots = spec.param_slots()?;
        let mut slot_of = vec![None; spec.layers.len()];
        for (k, s) in slots.iter().enumerate() {
            slot_of[s.layer] = Some(k);
        }
        let n_params = spec.n_params()?;
        Ok(Self {
            spec: spec.clone(),
            shapes,
            slot_of,
            slots,
            n_params,
        })
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn slots(&self) -> &[ParamSlot] {
        &self.slots
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn input_size(&self) -> usize {
        self.spec.input_size()
    }

    fn weights<'a>(&self, params: &'a [f64], layer: usize) -> (&'a [f64], &'a [f64]) {
        let s = &self.slots[self.slot_of[layer].expect("parameterized layer")];
        (
            &params[s.weight_offset..s.weight_offset + s.weight_len],
            &params[s.bias_offset..s.bias_offset + s.bias_len],
        )
    }

    /// Forward pass for one sample, recording what backward needs.
    pub fn forward_traced(&self, params: &[f64], x: &[f64], mode: Mode) -> Trace {
        debug_assert_eq!(params.len(), self.n_params);
        debug_assert_eq!(x.len(), self.input_size());
        let mut inputs = Vec::with_capacity(self.spec.layers.len());
        let mut masks = Vec::with_capacity(self.spec.layers.len());
        let mut cur = x.to_vec();
        let mut rng = match mode {
            Mode::Train { dropout_seed } => Some(ChaCha8Rng::seed_from_u64(dropout_seed)),
            Mode::Eval => None,
        };
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let (ins, outs) = self.shapes[i];
            let mut mask = None;
            let next = match *layer {
                LayerSpec::Conv1d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                } => {
                    let (w, b) = self.weights(params, i);
                    conv_forward(
                        &cur,
                        w,
                        b,
                        in_channels,
                        out_channels,
                        kernel,
                        stride,
                        ins.len,
                        outs.len,
                    )
                }
                LayerSpec::Relu => cur.iter().map(|&v| v.max(0.0)).collect(),
                LayerSpec::GlobalAvgPool => cur
                    .chunks_exact(ins.len)
                    .map(|c| c.iter().sum::<f64>() / ins.len as f64)
                    .collect(),
                LayerSpec::Dropout { p } => match rng.as_mut() {
                    Some(rng) if p > 0.0 => {
                        let keep = 1.0 - p;
                        let m: Vec<f64> = (0..cur.len())
                            .map(|_| {
                                if rng.random::<f64>() < keep {
                                    1.0 / keep
                                } else {
                                    0.0
                                }
                            })
                            .collect();
                        let out = cur.iter().zip(&m).map(|(a, s)| a * s).collect();
                        mask = Some(m);
                        out
                    }
                    _ => cur.clone(),
                },
                LayerSpec::Dense { inputs, outputs } => {
                    let (w, b) = self.weights(params, i);
                    (0..outputs)
                        .map(|o| {
                            b[o] + w[o * inputs..(o + 1) * inputs]
                                .iter()
                                .zip(&cur)
                                .map(|(a, c)| a * c)
                                .sum::<f64>()
                        })
                        .collect()
                }
                LayerSpec::Sigmoid => cur.iter().map(|&v| sigmoid(v)).collect(),
            };
            inputs.push(std::mem::replace(&mut cur, next));
            masks.push(mask);
        }
        Trace {
            inputs,
            masks,
            output: cur[0],
        }
    }

    pub fn forward_one(&self, params: &[f64], x: &[f64], mode: Mode) -> f64 {
        self.forward_traced(params, x, mode).output
    }

    /// Accumulates `d_out * d(output)/d(params)` into `grad`.
    pub fn backward(&self, params: &[f64], trace: &Trace, d_out: f64, grad: &mut [f64]) {
        let mut delta = vec![d_out];
        for (i, layer) in self.spec.layers.iter().enumerate().rev() {
            let (ins, outs) = self.shapes[i];
            let x = &trace.inputs[i];
            delta = match *layer {
                LayerSpec::Sigmoid => {
                    // input of the sigmoid is the logit; recompute its value
                    delta
                        .iter()
                        .zip(x)
                        .map(|(d, &z)| {
                            let s = sigmoid(z);
                            d * s * (1.0 - s)
                        })
                        .collect()
                }
                LayerSpec::Relu => delta
                    .iter()
                    .zip(x)
                    .map(|(d, &z)| if z > 0.0 { *d } else { 0.0 })
                    .collect(),
                LayerSpec::Dropout { .. } => match &trace.masks[i] {
                    Some(m) => delta.iter().zip(m).map(|(d, s)| d * s).collect(),
                    None => delta,
                },
                LayerSpec::GlobalAvgPool => {
                    let scale = 1.0 / ins.len as f64;
                    delta
                        .iter()
                        .flat_map(|&d| std::iter::repeat_n(d * scale, ins.len))
                        .collect()
                }
                LayerSpec::Dense { inputs, outputs } => {
                    let s = self.slots[self.slot_of[i].unwrap()];
                    let w = &params[s.weight_offset..s.weight_offset + s.weight_len];
                    let mut dx = vec![0.0; inputs];
                    for o in 0..outputs {
                        let d = delta[o];
                        grad[s.bias_offset + o] += d;
                        if d == 0.0 {
                            continue;
                        }
                        let gw = &mut grad
                            [s.weight_offset + o * inputs..s.weight_offset + (o + 1) * inputs];
                        for ((g, xi), (dxi, wi)) in gw
                            .iter_mut()
                            .zip(x)
                            .zip(dx.iter_mut().zip(&w[o * inputs..]))
                        {
                            *g += d * xi;
                            *dxi += d * wi;
                        }
                    }
                    dx
                }
                LayerSpec::Conv1d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                } => {
                    let s = self.slots[self.slot_of[i].unwrap()];
                    let w = &params[s.weight_offset..s.weight_offset + s.weight_len];
                    let (gw, gb) = {
                        let (head, tail) = grad.split_at_mut(s.bias_offset);
                        (&mut head[s.weight_offset..], &mut tail[..s.bias_len])
                    };
                    conv_backward(
                        x,
                        w,
                        &delta,
                        gw,
                        gb,
                        in_channels,
                        out_channels,
                        kernel,
                        stride,
                        ins.len,
                        outs.len,
                    )
                }
            };
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    lin: usize,
    lout: usize,
) -> Vec<f64> {
    let mut y = vec![0.0; cout * lout];
    for o in 0..cout {
        let yo = &mut y[o * lout..(o + 1) * lout];
        yo.fill(b[o]);
        for i in 0..cin {
            let xi = &x[i * lin..(i + 1) * lin];
            for j in 0..k {
                let wv = w[(o * cin + i) * k + j];
                for (t, yv) in yo.iter_mut().enumerate() {
                    *yv += wv * xi[t * stride + j];
                }
            }
        }
    }
    y
}

/// Accumulates weight and bias gradients and returns the input gradient.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    lin: usize,
    lout: usize,
) -> Vec<f64> {
    let mut dx = vec![0.0; cin * lin];
    for o in 0..cout {
        let dyo = &dy[o * lout..(o + 1) * lout];
        gb[o] += dyo.iter().sum::<f64>();
        for i in 0..cin {
            let xi = &x[i * lin..(i + 1) * lin];
            let dxi = &mut dx[i * lin..(i + 1) * lin];
            for j in 0..k {
                let idx = (o * cin + i) * k + j;
                let wv = w[idx];
                let mut acc = 0.0;
                for (t, &d) in dyo.iter().enumerate() {
                    acc += d * xi[t * stride + j];
                    dxi[t * stride + j] += d * wv;
                }
                gw[idx] += acc;
            }
        }
    }
    dx
}

/// Predictions for a batch of flattened inputs.
///
/// In training mode sample `b` uses dropout stream `derive_seed(dropout_seed, b)`.
pub fn forward(
    net: &Network,
    params: &[f64],
    batch: &[Vec<f64>],
    training_mode: bool,
    dropout_seed: u64,
) -> Result<Vec<f64>> {
    check_batch(net, params, batch)?;
    Ok(batch
        .par_iter()
        .enumerate()
        .map(|(b, x)| net.forward_one(params, x, sample_mode(training_mode, dropout_seed, b)))
        .collect())
}

fn sample_mode(training: bool, seed: u64, b: usize) -> Mode {
    if training {
        Mode::Train {
            dropout_seed: derive_seed(seed, b as u64),
        }
    } else {
        Mode::Eval
    }
}

fn check_batch(net: &Network, params: &[f64], batch: &[Vec<f64>]) -> Result<()> {
    if params.len() != net.n_params() {
        return Err(Error::Input(format!(
            "expected {} parameters, got {}",
            net.n_params(),
            params.len()
        )));
    }
    if let Some((b, x)) = batch
        .iter()
        .enumerate()
        .find(|(_, x)| x.len() != net.input_size())
    {
        return Err(Error::Input(format!(
            "sample {b} has {} values, network takes {}",
            x.len(),
            net.input_size()
        )));
    }
    if let Some(b) = batch.iter().position(|x| !x.iter().all(|v| v.is_finite())) {
        return Err(Error::Input(format!("sample {b} has non-finite values")));
    }
    Ok(())
}

/// Mean squared error of the batch and its gradient with respect to every parameter.
#[derive(Debug, Clone)]
pub struct LossAndGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub predictions: Vec<f64>,
}

/// MSE loss over a batch and its exact gradient.
///
/// Per-sample gradients are computed in parallel and summed in sample order,
/// so the result does not depend on the thread count.
pub fn backward(
    net: &Network,
    params: &[f64],
    batch: &[Vec<f64>],
    targets: &[f64],
    mode: BatchMode,
) -> Result<LossAndGrad> {
    check_batch(net, params, batch)?;
    if targets.len() != batch.len() {
        return Err(Error::Input(format!(
            "{} targets for {} samples",
            targets.len(),
            batch.len()
        )));
    }
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let n = batch.len() as f64;
    let per_sample: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .zip(targets)
        .enumerate()
        .map(|(b, (x, &y))| {
            let m = match mode {
                BatchMode::Eval => Mode::Eval,
                BatchMode::Train { dropout_seed } => sample_mode(true, dropout_seed, b),
            };
            let trace = net.forward_traced(params, x, m);
            let p = trace.output();
            let mut g = vec![0.0; net.n_params()];
            net.backward(params, &trace, 2.0 * (p - y) / n, &mut g);
            (p, g)
        })
        .collect();

    let mut grad = vec![0.0; net.n_params()];
    let mut loss = 0.0;
    let mut predictions = Vec::with_capacity(batch.len());
    for ((p, g), &y) in per_sample.iter().zip(targets) {
        loss += (p - y) * (p - y);
        predictions.push(*p);
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    Ok(LossAndGrad {
        loss: loss / n,
        grad,
        predictions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchMode {
    Eval,
    Train { dropout_seed: u64 },
}
