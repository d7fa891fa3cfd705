//! Forward definitions of the differentiable operations.

use super::linalg::{self, ConvGeom};
use super::tape::{Op, Var};
use crate::error::{invalid, shape_err, Error, Result};
use crate::scalar::Scalar;

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<'t, T: Scalar> Var<'t, T> {
    fn same_tape(&self, other: &Var<'t, T>) {
        assert!(std::ptr::eq(self.tape, other.tape), "variables from different tapes");
    }

    fn elementwise(
        &self,
        other: &Var<'t, T>,
        name: &str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var<'t, T>> {
        self.same_tape(other);
        let (shape, value) = {
            let nodes = self.tape.nodes();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            if a.shape != b.shape {
                return shape_err(format!("{name}: {:?} vs {:?}", a.shape, b.shape));
            }
            let v = a.value.iter().zip(&b.value).map(|(&x, &y)| f(x, y)).collect();
            (a.shape.clone(), v)
        };
        self.tape.push(name, shape, value, op, &[self.id, other.id])
    }

    fn unary(&self, name: &str, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var<'t, T>> {
        let (shape, value) = {
            let nodes = self.tape.nodes();
            let a = &nodes[self.id];
            (a.shape.clone(), a.value.iter().map(|&x| f(x)).collect())
        };
        self.tape.push(name, shape, value, op, &[self.id])
    }

    pub fn add(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.elementwise(other, "add", |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.elementwise(other, "sub", |a, b| a - b, Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.elementwise(other, "mul", |a, b| a * b, Op::Mul(self.id, other.id))
    }

    pub fn div(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.elementwise(other, "div", |a, b| a / b, Op::Div(self.id, other.id))
    }

    /// `scale · self + shift`
    pub fn affine(&self, scale: T, shift: T) -> Result<Var<'t, T>> {
        self.unary("affine", |x| scale * x + shift, Op::Affine { x: self.id, scale })
    }

    pub fn scale(&self, s: T) -> Result<Var<'t, T>> {
        self.affine(s, T::zero())
    }

    pub fn neg(&self) -> Result<Var<'t, T>> {
        self.affine(-T::one(), T::zero())
    }

    pub fn relu(&self) -> Result<Var<'t, T>> {
        self.unary("relu", |x| if x > T::zero() { x } else { T::zero() }, Op::Relu(self.id))
    }

    pub fn ln(&self) -> Result<Var<'t, T>> {
        self.unary("ln", |x| x.ln(), Op::Ln(self.id))
    }

    pub fn exp(&self) -> Result<Var<'t, T>> {
        self.unary("exp", |x| x.exp(), Op::Exp(self.id))
    }

    pub fn square(&self) -> Result<Var<'t, T>> {
        self.unary("square", |x| x * x, Op::Square(self.id))
    }

    pub fn sum(&self) -> Result<Var<'t, T>> {
        let s = self.tape.nodes()[self.id].value.iter().copied().sum::<T>();
        self.tape.push("sum", vec![], vec![s], Op::Sum(self.id), &[self.id])
    }

    pub fn mean(&self) -> Result<Var<'t, T>> {
        let m = {
            let nodes = self.tape.nodes();
            let v = &nodes[self.id].value;
            if v.is_empty() {
                return invalid("mean of empty tensor");
            }
            v.iter().copied().sum::<T>() / T::from_usize_lossy(v.len())
        };
        self.tape.push("mean", vec![], vec![m], Op::Mean(self.id), &[self.id])
    }

    /// Sums over the last axis.
    pub fn sum_last_axis(&self) -> Result<Var<'t, T>> {
        let (shape, value, width) = {
            let nodes = self.tape.nodes();
            let a = &nodes[self.id];
            let Some((&width, lead)) = a.shape.split_last() else {
                return shape_err("sum_last_axis on a scalar");
            };
            let value = a.value.chunks(width.max(1)).map(|c| c.iter().copied().sum()).collect();
            (lead.to_vec(), value, width)
        };
        self.tape.push("sum_last_axis", shape, value, Op::SumLastAxis { x: self.id, width }, &[self.id])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, T>> {
        let value = {
            let nodes = self.tape.nodes();
            let a = &nodes[self.id];
            if numel(shape) != a.value.len() {
                return shape_err(format!("cannot reshape {:?} into {shape:?}", a.shape));
            }
            a.value.clone()
        };
        self.tape.push("reshape", shape.to_vec(), value, Op::Reshape(self.id), &[self.id])
    }

    /// Collapses all axes after the first.
    pub fn flatten(&self) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let n = shape.first().copied().unwrap_or(1);
        let rest = numel(&shape) / n.max(1);
        self.reshape(&[n, rest])
    }

    pub fn matmul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(other);
        let (m, k, n, value) = {
            let nodes = self.tape.nodes();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
                return shape_err(format!("matmul: {:?} x {:?}", a.shape, b.shape));
            }
            let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
            let mut c = vec![T::zero(); m * n];
            linalg::gemm_nn(&a.value, &b.value, &mut c, m, k, n);
            (m, k, n, c)
        };
        self.tape.push(
            "matmul",
            vec![m, n],
            value,
            Op::MatMul { a: self.id, b: other.id, m, k, n },
            &[self.id, other.id],
        )
    }

    pub fn transpose(&self) -> Result<Var<'t, T>> {
        let (rows, cols, value) = {
            let nodes = self.tape.nodes();
            let a = &nodes[self.id];
            if a.shape.len() != 2 {
                return shape_err("transpose needs a matrix");
            }
            let (r, c) = (a.shape[0], a.shape[1]);
            (r, c, linalg::transpose(&a.value, r, c))
        };
        self.tape.push("transpose", vec![cols, rows], value, Op::Transpose { x: self.id, rows, cols }, &[self.id])
    }

    /// Adds `bias[c]` to every element of channel `c` (axis 1).
    pub fn add_bias(&self, bias: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(bias);
        let (shape, value, channels, inner) = {
            let nodes = self.tape.nodes();
            let (x, b) = (&nodes[self.id], &nodes[bias.id]);
            if x.shape.len() < 2 || b.value.len() != x.shape[1] {
                return shape_err(format!("add_bias: {:?} + {:?}", x.shape, b.shape));
            }
            let channels = x.shape[1];
            let inner: usize = numel(&x.shape[2..]);
            let mut v = x.value.clone();
            for (i, chunk) in v.chunks_mut(inner).enumerate() {
                let bc = b.value[i % channels];
                chunk.iter_mut().for_each(|e| *e += bc);
            }
            (x.shape.clone(), v, channels, inner)
        };
        self.tape.push(
            "add_bias",
            shape,
            value,
            Op::AddBias { x: self.id, b: bias.id, channels, inner },
            &[self.id, bias.id],
        )
    }

    /// Row-wise log-softmax of an `N×C` matrix.
    pub fn log_softmax(&self) -> Result<Var<'t, T>> {
        let (shape, value, cols) = {
            let nodes = self.tape.nodes();
            let a = &nodes[self.id];
            if a.shape.len() != 2 || a.shape[1] == 0 {
                return shape_err("log_softmax needs a non-empty N×C matrix");
            }
            let cols = a.shape[1];
            let mut v = a.value.clone();
            for row in v.chunks_mut(cols) {
                let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
                let lse = mx + row.iter().map(|&z| (z - mx).exp()).sum::<T>().ln();
                row.iter_mut().for_each(|z| *z -= lse);
            }
            (a.shape.clone(), v, cols)
        };
        self.tape.push("log_softmax", shape, value, Op::LogSoftmax { x: self.id, cols }, &[self.id])
    }

    /// 2-d convolution without bias. `self`: `N×C×H×W`, `weight`: `O×C×k×k`.
    pub fn conv2d(&self, weight: &Var<'t, T>, stride: usize, pad: usize) -> Result<Var<'t, T>> {
        self.same_tape(weight);
        let (geom, batch, out_ch, value, cols) = {
            let nodes = self.tape.nodes();
            let (x, w) = (&nodes[self.id], &nodes[weight.id]);
            if x.shape.len() != 4 || w.shape.len() != 4 || x.shape[1] != w.shape[1] || w.shape[2] != w.shape[3] {
                return shape_err(format!("conv2d: input {:?} weight {:?}", x.shape, w.shape));
            }
            if stride == 0 {
                return invalid("conv2d stride must be positive");
            }
            let geom = ConvGeom {
                channels: x.shape[1],
                height: x.shape[2],
                width: x.shape[3],
                kernel: w.shape[2],
                stride,
                pad,
            };
            if geom.height + 2 * pad < geom.kernel || geom.width + 2 * pad < geom.kernel {
                return shape_err("conv2d kernel larger than padded input");
            }
            let (batch, out_ch) = (x.shape[0], w.shape[0]);
            let (plen, olen) = (geom.patch_len(), geom.out_len());
            let in_len = geom.channels * geom.height * geom.width;
            let wide = batch * olen;
            let mut cols = vec![T::zero(); plen * wide];
            for n in 0..batch {
                linalg::im2col_strided(&x.value[n * in_len..(n + 1) * in_len], &geom, &mut cols, wide, n * olen);
            }
            let mut flat = vec![T::zero(); out_ch * wide];
            linalg::gemm_nn(&w.value, &cols, &mut flat, out_ch, plen, wide);
            let mut out = vec![T::zero(); batch * out_ch * olen];
            for o in 0..out_ch {
                for n in 0..batch {
                    out[(n * out_ch + o) * olen..(n * out_ch + o + 1) * olen]
                        .copy_from_slice(&flat[o * wide + n * olen..o * wide + (n + 1) * olen]);
                }
            }
            (geom, batch, out_ch, out, cols)
        };
        self.tape.push(
            "conv2d",
            vec![batch, out_ch, geom.out_height(), geom.out_width()],
            value,
            Op::Conv2d { x: self.id, w: weight.id, geom, batch, out_ch, cols },
            &[self.id, weight.id],
        )
    }

    /// 2×2 max pooling with stride 2 (odd trailing rows/columns dropped).
    pub fn max_pool2(&self) -> Result<Var<'t, T>> {
        let (shape, value, argmax) = {
            let nodes = self.tape.nodes();
            let x = &nodes[self.id];
            if x.shape.len() != 4 || x.shape[2] < 2 || x.shape[3] < 2 {
                return shape_err(format!("max_pool2: {:?}", x.shape));
            }
            let (n, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
            let (ho, wo) = (h / 2, w / 2);
            let mut value = Vec::with_capacity(n * c * ho * wo);
            let mut argmax = Vec::with_capacity(n * c * ho * wo);
            for plane in 0..n * c {
                let base = plane * h * w;
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut best = base + (2 * oy) * w + 2 * ox;
                        for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                            let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                            if x.value[idx] > x.value[best] {
                                best = idx;
                            }
                        }
                        value.push(x.value[best]);
                        argmax.push(best);
                    }
                }
            }
            (vec![n, c, ho, wo], value, argmax)
        };
        self.tape.push("max_pool2", shape, value, Op::MaxPool2 { x: self.id, argmax }, &[self.id])
    }

    /// `N×C×H×W → N×C` spatial mean.
    pub fn global_avg_pool(&self) -> Result<Var<'t, T>> {
        let (shape, value, spatial) = {
            let nodes = self.tape.nodes();
            let x = &nodes[self.id];
            if x.shape.len() != 4 {
                return shape_err(format!("global_avg_pool: {:?}", x.shape));
            }
            let spatial = x.shape[2] * x.shape[3];
            let inv = T::one() / T::from_usize_lossy(spatial);
            let value = x.value.chunks(spatial).map(|c| c.iter().copied().sum::<T>() * inv).collect();
            (vec![x.shape[0], x.shape[1]], value, spatial)
        };
        self.tape.push("global_avg_pool", shape, value, Op::GlobalAvgPool { x: self.id, spatial }, &[self.id])
    }

    /// Batch normalization over axis 1 of an `[N, C, ...]` tensor.
    ///
    /// With `running = None` the batch statistics are used (training mode)
    /// and returned as `(mean, biased variance)` so the caller can update
    /// its running estimates. With `running = Some((mean, var))` the given
    /// statistics are treated as constants (evaluation mode).
    pub fn batch_norm(
        &self,
        gamma: &Var<'t, T>,
        beta: &Var<'t, T>,
        running: Option<(&[T], &[T])>,
        eps: T,
    ) -> Result<(Var<'t, T>, Vec<T>, Vec<T>)> {
        self.same_tape(gamma);
        self.same_tape(beta);
        let (shape, value, xhat, inv_std, mean, var, channels, inner) = {
            let nodes = self.tape.nodes();
            let (x, g, b) = (&nodes[self.id], &nodes[gamma.id], &nodes[beta.id]);
            if x.shape.len() < 2 {
                return shape_err("batch_norm needs [N, C, ...]");
            }
            let channels = x.shape[1];
            if g.value.len() != channels || b.value.len() != channels {
                return shape_err("batch_norm affine parameters must have C entries");
            }
            let n = x.shape[0];
            let inner = numel(&x.shape[2..]);
            let count = n * inner;
            let (mean, var) = match running {
                Some((m, v)) => {
                    if m.len() != channels || v.len() != channels {
                        return shape_err("batch_norm running stats must have C entries");
                    }
                    (m.to_vec(), v.to_vec())
                }
                None => {
                    if count < 2 {
                        return invalid("batch_norm training mode needs more than one value per channel");
                    }
                    let mut mean = vec![T::zero(); channels];
                    let mut var = vec![T::zero(); channels];
                    for (i, chunk) in x.value.chunks(inner).enumerate() {
                        mean[i % channels] += chunk.iter().copied().sum::<T>();
                    }
                    let inv_count = T::one() / T::from_usize_lossy(count);
                    mean.iter_mut().for_each(|m| *m *= inv_count);
                    for (i, chunk) in x.value.chunks(inner).enumerate() {
                        let m = mean[i % channels];
                        var[i % channels] += chunk.iter().map(|&v| (v - m) * (v - m)).sum::<T>();
                    }
                    var.iter_mut().for_each(|v| *v *= inv_count);
                    (mean, var)
                }
            };
            let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
            let mut xhat = x.value.clone();
            let mut out = x.value.clone();
            for (i, (hc, oc)) in xhat.chunks_mut(inner).zip(out.chunks_mut(inner)).enumerate() {
                let c = i % channels;
                for (h, o) in hc.iter_mut().zip(oc.iter_mut()) {
                    *h = (*h - mean[c]) * inv_std[c];
                    *o = g.value[c] * *h + b.value[c];
                }
            }
            (x.shape.clone(), out, xhat, inv_std, mean, var, channels, inner)
        };
        let out = self.tape.push(
            "batch_norm",
            shape,
            value,
            Op::BatchNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                inv_std,
                channels,
                inner,
                train: running.is_none(),
            },
            &[self.id, gamma.id, beta.id],
        )?;
        Ok((out, mean, var))
    }

    /// Gathers rows of the leading axis (indices may repeat).
    pub fn select_rows(&self, idx: &[usize]) -> Result<Var<'t, T>> {
        let (shape, value, width) = {
            let nodes = self.tape.nodes();
            let x = &nodes[self.id];
            if x.shape.is_empty() {
                return shape_err("select_rows on a scalar");
            }
            let width = numel(&x.shape[1..]);
            if let Some(&bad) = idx.iter().find(|&&i| i >= x.shape[0]) {
                return shape_err(format!("row {bad} out of range for {:?}", x.shape));
            }
            let mut value = Vec::with_capacity(idx.len() * width);
            for &i in idx {
                value.extend_from_slice(&x.value[i * width..(i + 1) * width]);
            }
            let mut shape = x.shape.clone();
            shape[0] = idx.len();
            (shape, value, width)
        };
        self.tape.push("select_rows", shape, value, Op::SelectRows { x: self.id, idx: idx.to_vec(), width }, &[self.id])
    }

    /// Euclidean norm of each row of an `N×F` matrix. The gradient at a
    /// zero row is taken to be zero.
    pub fn row_norm(&self) -> Result<Var<'t, T>> {
        let (rows, value, width) = {
            let nodes = self.tape.nodes();
            let x = &nodes[self.id];
            if x.shape.len() != 2 {
                return shape_err("row_norm needs a matrix");
            }
            let width = x.shape[1];
            let v = x.value.chunks(width.max(1)).map(|r| linalg::dot(r, r).sqrt()).collect();
            (x.shape[0], v, width)
        };
        self.tape.push("row_norm", vec![rows], value, Op::RowNorm { x: self.id, width }, &[self.id])
    }

    /// `K[i][j] = ½ (x_iᵀx_j / ((‖x_i‖+eps)(‖x_j‖+eps)) + 1)` for an `N×F` batch.
    pub fn cosine_kernel_matrix(&self, eps: T) -> Result<Var<'t, T>> {
        let (n, value, width) = {
            let nodes = self.tape.nodes();
            let x = &nodes[self.id];
            if x.shape.len() != 2 {
                return shape_err("cosine kernel needs an N×F batch");
            }
            let (n, width) = (x.shape[0], x.shape[1]);
            (n, cosine_kernel_forward(&x.value, n, width, eps), width)
        };
        self.tape.push("cosine_kernel", vec![n, n], value, Op::CosineKernel { x: self.id, width, eps }, &[self.id])
    }

    /// `K[i][j] = 1 / (1 + ‖x_i − x_j‖^degree)` for an `N×F` batch.
    pub fn tstudent_kernel_matrix(&self, degree: u32) -> Result<Var<'t, T>> {
        if degree == 0 {
            return invalid("T-student degree must be at least 1");
        }
        let (n, value, width) = {
            let nodes = self.tape.nodes();
            let x = &nodes[self.id];
            if x.shape.len() != 2 {
                return shape_err("T-student kernel needs an N×F batch");
            }
            let (n, width) = (x.shape[0], x.shape[1]);
            (n, tstudent_kernel_forward(&x.value, n, width, degree), width)
        };
        self.tape.push("tstudent_kernel", vec![n, n], value, Op::TStudentKernel { x: self.id, width, degree }, &[self.id])
    }

    /// Column-normalized conditional probabilities from an `N×N` kernel
    /// matrix: the diagonal is dropped, each column is normalized, entries
    /// are floored at `floor` and each column is normalized again.
    pub fn cond_prob(&self, floor: T) -> Result<Var<'t, T>> {
        let (n, value) = {
            let nodes = self.tape.nodes();
            let k = &nodes[self.id];
            if k.shape.len() != 2 || k.shape[0] != k.shape[1] {
                return shape_err(format!("cond_prob needs a square matrix, got {:?}", k.shape));
            }
            let n = k.shape[0];
            if n < 2 {
                return invalid("conditional probabilities need at least two samples");
            }
            let stages = cond_prob_forward(&k.value, n, floor)?;
            (n, stages.out)
        };
        self.tape.push("cond_prob", vec![n, n], value, Op::CondProb { k: self.id, n, floor }, &[self.id])
    }

    /// Jeffreys divergence `Σ_{i≠j} (a_ij − b_ij)(ln a_ij − ln b_ij)` between two
    /// `N×N` probability matrices. Off-diagonal entries must be positive.
    pub fn jeffreys(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(other);
        let (n, value) = {
            let nodes = self.tape.nodes();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            if a.shape.len() != 2 || a.shape != b.shape || a.shape[0] != a.shape[1] {
                return shape_err(format!("jeffreys: {:?} vs {:?}", a.shape, b.shape));
            }
            let n = a.shape[0];
            (n, jeffreys_forward(&a.value, &b.value, n)?)
        };
        self.tape.push("jeffreys", vec![], vec![value], Op::Jeffreys { a: self.id, b: other.id, n }, &[self.id, other.id])
    }
}

pub(crate) fn cosine_kernel_forward<T: Scalar>(x: &[T], n: usize, width: usize, eps: T) -> Vec<T> {
    let norms: Vec<T> = (0..n)
        .map(|i| {
            let r = &x[i * width..(i + 1) * width];
            linalg::dot(r, r).sqrt() + eps
        })
        .collect();
    let half = T::c(0.5);
    let mut k = vec![T::zero(); n * n];
    for i in 0..n {
        let ri = &x[i * width..(i + 1) * width];
        for j in i..n {
            let rj = &x[j * width..(j + 1) * width];
            let v = half * (linalg::dot(ri, rj) / (norms[i] * norms[j]) + T::one());
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

pub(crate) fn pairwise_distances<T: Scalar>(x: &[T], n: usize, width: usize) -> Vec<T> {
    let mut d = vec![T::zero(); n * n];
    for i in 0..n {
        let ri = &x[i * width..(i + 1) * width];
        for j in i + 1..n {
            let rj = &x[j * width..(j + 1) * width];
            let s: T = ri.iter().zip(rj).map(|(&a, &b)| (a - b) * (a - b)).sum();
            let v = s.sqrt();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

pub(crate) fn tstudent_kernel_forward<T: Scalar>(x: &[T], n: usize, width: usize, degree: u32) -> Vec<T> {
    pairwise_distances(x, n, width)
        .into_iter()
        .map(|d| T::one() / (T::one() + d.powi(degree as i32)))
        .collect()
}

/// Intermediate values of the conditional-probability transform.
pub(crate) struct CondProbStages<T> {
    /// First normalization, before flooring.
    pub raw: Vec<T>,
    pub raw_sums: Vec<T>,
    pub floored_sums: Vec<T>,
    pub out: Vec<T>,
}

pub(crate) fn cond_prob_forward<T: Scalar>(k: &[T], n: usize, floor: T) -> Result<CondProbStages<T>> {
    let mut raw_sums = vec![T::zero(); n];
    for j in 0..n {
        for i in 0..n {
            if i != j {
                raw_sums[j] += k[i * n + j];
            }
        }
        if !(raw_sums[j] > T::zero()) {
            return Err(Error::NonFinite(format!("conditional probabilities (kernel column {j} has no positive mass)")));
        }
    }
    let mut raw = vec![T::zero(); n * n];
    let mut out = vec![T::zero(); n * n];
    let mut floored_sums = vec![T::zero(); n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let p = k[i * n + j] / raw_sums[j];
                raw[i * n + j] = p;
                let q = if p < floor { floor } else { p };
                out[i * n + j] = q;
                floored_sums[j] += q;
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] /= floored_sums[j];
        }
    }
    Ok(CondProbStages { raw, raw_sums, floored_sums, out })
}

pub(crate) fn jeffreys_forward<T: Scalar>(a: &[T], b: &[T], n: usize) -> Result<T> {
    let mut acc = T::zero();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let (p, q) = (a[i * n + j], b[i * n + j]);
            if !(p > T::zero() && q > T::zero()) {
                return invalid(format!("jeffreys needs positive off-diagonal entries, found ({p}, {q}) at ({i}, {j})"));
            }
            acc += (p - q) * (p.ln() - q.ln());
        }
    }
    Ok(acc)
}
