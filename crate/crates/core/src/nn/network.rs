use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::graph::{Layer, LayerGraph};
use super::params::ParamStore;
use crate::error::{invalid, shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{Gradients, Tape, Tensor, Var};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batchnorm; running estimates are updated.
    Train,
    /// Running statistics in batchnorm.
    Eval,
}

/// Running batchnorm statistics of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BnBuffers<T> {
    pub layer: usize,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Slot {
    None,
    Conv { weight: usize, bias: usize },
    Dense { weight: usize, bias: usize },
    Norm { gamma: usize, beta: usize, buffers: usize },
}

/// A [`LayerGraph`] together with its parameters and batchnorm buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    graph: LayerGraph,
    params: ParamStore<T>,
    buffers: Vec<BnBuffers<T>>,
    slots: Vec<Slot>,
    head: Option<(usize, usize)>,
}

/// Outputs of one forward pass.
pub struct ForwardPass<'t, T> {
    /// Output of every layer, in order.
    pub layers: Vec<Var<'t, T>>,
    /// Flattened `N×F` representations at the transfer points.
    pub transfer: Vec<Var<'t, T>>,
    pub logits: Option<Var<'t, T>>,
    /// Tape handle of every parameter, in registry order.
    pub bound: Vec<Var<'t, T>>,
}

impl<T: Scalar> Network<T> {
    /// Allocates parameters with He-normal weights, zero biases and unit
    /// batchnorm scales.
    pub fn init<R: Rng>(graph: LayerGraph, rng: &mut R) -> Result<Self> {
        Self::build(graph, |fan_in, shape| {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            Tensor::from_fn(shape, |_| T::c(normal.sample(rng)))
        })
    }

    fn build(graph: LayerGraph, mut weight: impl FnMut(usize, &[usize]) -> Tensor<T>) -> Result<Self> {
        graph.validate()?;
        let shapes = graph.output_shapes()?;
        let mut params = ParamStore::new();
        let mut buffers = Vec::new();
        let mut slots = Vec::with_capacity(graph.layers.len());
        let mut he = |fan_in: usize, shape: &[usize]| weight(fan_in, shape).with_grad();
        for (i, layer) in graph.layers.iter().enumerate() {
            let slot = match *layer {
                Layer::Conv2d { in_channels, out_channels, kernel, .. } => {
                    let fan_in = in_channels * kernel * kernel;
                    let w = he(fan_in, &[out_channels, in_channels, kernel, kernel]);
                    Slot::Conv {
                        weight: params.push(format!("layer{i}.weight"), w),
                        bias: params.push(format!("layer{i}.bias"), Tensor::zeros(&[out_channels]).with_grad()),
                    }
                }
                Layer::Dense { inputs, outputs } => {
                    let w = he(inputs, &[inputs, outputs]);
                    Slot::Dense {
                        weight: params.push(format!("layer{i}.weight"), w),
                        bias: params.push(format!("layer{i}.bias"), Tensor::zeros(&[outputs]).with_grad()),
                    }
                }
                Layer::BatchNorm { channels } => {
                    buffers.push(BnBuffers { layer: i, mean: vec![T::zero(); channels], var: vec![T::one(); channels] });
                    Slot::Norm {
                        gamma: params.push(format!("layer{i}.gamma"), Tensor::full(&[channels], T::one()).with_grad()),
                        beta: params.push(format!("layer{i}.beta"), Tensor::zeros(&[channels]).with_grad()),
                        buffers: buffers.len() - 1,
                    }
                }
                _ => Slot::None,
            };
            slots.push(slot);
        }
        let head = match graph.head_classes {
            Some(classes) => {
                let rep: usize = match graph.transfer_points.last() {
                    Some(&l) => shapes[l].iter().product(),
                    None => graph.input_shape.iter().product(),
                };
                let w = he(rep, &[rep, classes]);
                Some((params.push("head.weight", w), params.push("head.bias", Tensor::zeros(&[classes]).with_grad())))
            }
            None => None,
        };
        Ok(Self { graph, params, buffers, slots, head })
    }

    /// Rebuilds a network from stored parts (checkpoint loading).
    pub fn from_parts(graph: LayerGraph, params: ParamStore<T>, buffers: Vec<BnBuffers<T>>) -> Result<Self> {
        let template = Self::build(graph, |_, shape| Tensor::zeros(shape))?;
        if template.params.len() != params.len() {
            return invalid("parameter count does not match graph");
        }
        for (a, b) in template.params.iter().zip(params.iter()) {
            if a.name != b.name || a.tensor.shape() != b.tensor.shape() {
                return invalid(format!("parameter {} does not match graph", b.name));
            }
        }
        if template.buffers.len() != buffers.len()
            || template.buffers.iter().zip(&buffers).any(|(a, b)| a.layer != b.layer || a.mean.len() != b.mean.len() || a.var.len() != b.var.len())
        {
            return invalid("batchnorm buffers do not match graph");
        }
        Ok(Self { params, buffers, ..template })
    }

    pub fn graph(&self) -> &LayerGraph {
        &self.graph
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn buffers(&self) -> &[BnBuffers<T>] {
        &self.buffers
    }

    pub fn has_head(&self) -> bool {
        self.head.is_some()
    }

    /// Drops the classification head (used when a supervised teacher becomes
    /// a pure feature extractor).
    pub fn without_head(&self) -> Result<Self> {
        let mut graph = self.graph.clone();
        graph.head_classes = None;
        let mut params = ParamStore::new();
        for p in self.params.iter().filter(|p| !p.name.starts_with("head.")) {
            params.push(p.name.clone(), p.tensor.clone());
        }
        Self::from_parts(graph, params, self.buffers.clone())
    }

    /// Records the network on `tape`.
    ///
    /// With `trainable` set, parameters that require grad become tape
    /// variables; otherwise every parameter is a constant. In
    /// [`Mode::Train`] the batchnorm running statistics are updated.
    pub fn forward<'t>(&mut self, tape: &'t Tape<T>, input: &Tensor<T>, mode: Mode, trainable: bool) -> Result<ForwardPass<'t, T>> {
        if input.ndim() != self.graph.input_shape.len() + 1 || input.shape()[1..] != self.graph.input_shape[..] {
            return shape_err(format!(
                "network {} expects [N, {:?}], got {:?}",
                self.graph.name,
                self.graph.input_shape,
                input.shape()
            ));
        }
        let bound: Vec<Var<'t, T>> = self
            .params
            .iter()
            .map(|p| if trainable && p.tensor.requires_grad() { tape.variable(&p.tensor) } else { tape.constant(&p.tensor) })
            .collect();
        let mut x = tape.constant(input);
        let mut layers = Vec::with_capacity(self.graph.layers.len());
        let momentum = T::c(BN_MOMENTUM);
        for (i, layer) in self.graph.layers.iter().enumerate() {
            x = match (layer, self.slots[i]) {
                (Layer::Conv2d { stride, pad, .. }, Slot::Conv { weight, bias }) => {
                    x.conv2d(&bound[weight], *stride, *pad)?.add_bias(&bound[bias])?
                }
                (Layer::Dense { .. }, Slot::Dense { weight, bias }) => x.matmul(&bound[weight])?.add_bias(&bound[bias])?,
                (Layer::Relu, _) => x.relu()?,
                (Layer::BatchNorm { .. }, Slot::Norm { gamma, beta, buffers }) => {
                    let eps = T::c(BN_EPS);
                    match mode {
                        Mode::Train => {
                            let (y, mean, var) = x.batch_norm(&bound[gamma], &bound[beta], None, eps)?;
                            let count = (x.len() / mean.len()) as f64;
                            let unbias = T::c(count / (count - 1.0));
                            let buf = &mut self.buffers[buffers];
                            for c in 0..mean.len() {
                                buf.mean[c] = (T::one() - momentum) * buf.mean[c] + momentum * mean[c];
                                buf.var[c] = (T::one() - momentum) * buf.var[c] + momentum * var[c] * unbias;
                            }
                            y
                        }
                        Mode::Eval => {
                            let buf = &self.buffers[buffers];
                            x.batch_norm(&bound[gamma], &bound[beta], Some((&buf.mean, &buf.var)), eps)?.0
                        }
                    }
                }
                (Layer::MaxPool2, _) => x.max_pool2()?,
                (Layer::GlobalAvgPool, _) => x.global_avg_pool()?,
                (Layer::Flatten, _) => x.flatten()?,
                _ => unreachable!("slot layout built from the same graph"),
            };
            layers.push(x);
        }
        let transfer = if self.graph.transfer_points.is_empty() {
            vec![x.flatten()?]
        } else {
            self.graph.transfer_points.iter().map(|&l| layers[l].flatten()).collect::<Result<Vec<_>>>()?
        };
        let logits = match self.head {
            Some((w, b)) => Some(transfer.last().expect("non-empty").matmul(&bound[w])?.add_bias(&bound[b])?),
            None => None,
        };
        Ok(ForwardPass { layers, transfer, logits, bound })
    }

    /// Activation after layer `upto` (the input itself for `None`).
    pub fn activation(&mut self, input: &Tensor<T>, upto: Option<usize>, mode: Mode) -> Result<Tensor<T>> {
        if let Some(u) = upto {
            if u >= self.graph.layers.len() {
                return invalid(format!("layer {u} out of range"));
            }
        }
        let tape = Tape::new();
        let pass = self.forward(&tape, input, mode, false)?;
        Ok(match upto {
            Some(u) => pass.layers[u].value(),
            None => input.clone(),
        })
    }

    /// Evaluation-mode representations at all transfer points, batched.
    pub fn representations(&mut self, input: &Tensor<T>, batch_size: usize) -> Result<Vec<Tensor<T>>> {
        let n = input.rows();
        let mut parts: Vec<Vec<T>> = vec![Vec::new(); self.graph.n_transfer_points()];
        let mut dims = vec![0; parts.len()];
        let mut start = 0;
        while start < n {
            let end = (start + batch_size.max(1)).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let tape = Tape::new();
            let pass = self.forward(&tape, &input.select_rows(&idx), Mode::Eval, false)?;
            for (k, v) in pass.transfer.iter().enumerate() {
                let t = v.value();
                dims[k] = t.row_len();
                parts[k].extend_from_slice(t.data());
            }
            start = end;
        }
        parts.into_iter().zip(dims).map(|(d, w)| Tensor::new(&[n, w], d)).collect()
    }

    /// Evaluation-mode logits for a whole dataset.
    pub fn logits(&mut self, input: &Tensor<T>, batch_size: usize) -> Result<Tensor<T>> {
        if self.head.is_none() {
            return invalid("network has no classification head");
        }
        let n = input.rows();
        let mut data = Vec::new();
        let mut classes = 0;
        let mut start = 0;
        while start < n {
            let end = (start + batch_size.max(1)).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let tape = Tape::new();
            let pass = self.forward(&tape, &input.select_rows(&idx), Mode::Eval, false)?;
            let l = pass.logits.expect("head present").value();
            classes = l.row_len();
            data.extend_from_slice(l.data());
            start = end;
        }
        Tensor::new(&[n, classes], data)
    }

    /// Adds the gradients of one backward pass into the parameter accumulators.
    pub fn accumulate(&mut self, grads: &Gradients<T>, pass: &ForwardPass<'_, T>) -> Result<()> {
        self.params.accumulate(grads, &pass.bound)
    }
}
