//! Reverse-mode rules for every [`Op`].

use super::linalg;
use super::ops::cond_prob_forward;
use super::tape::{Node, Op};
use crate::scalar::Scalar;

fn accumulate<T: Scalar>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], id: usize, delta: Vec<T>) {
    if !nodes[id].requires_grad {
        return;
    }
    match grads[id].as_mut() {
        Some(g) => g.iter_mut().zip(&delta).for_each(|(a, &b)| *a += b),
        None => grads[id] = Some(delta),
    }
}

fn wants<T>(nodes: &[Node<T>], id: usize) -> bool {
    nodes[id].requires_grad
}

pub(crate) fn propagate<T: Scalar>(nodes: &[Node<T>], id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let node = &nodes[id];
    let val = |i: usize| &nodes[i].value;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, g.to_vec());
            accumulate(nodes, grads, *b, g.to_vec());
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, g.to_vec());
            if wants(nodes, *b) {
                accumulate(nodes, grads, *b, g.iter().map(|&v| -v).collect());
            }
        }
        Op::Mul(a, b) => {
            if wants(nodes, *a) {
                accumulate(nodes, grads, *a, g.iter().zip(val(*b)).map(|(&g, &y)| g * y).collect());
            }
            if wants(nodes, *b) {
                accumulate(nodes, grads, *b, g.iter().zip(val(*a)).map(|(&g, &x)| g * x).collect());
            }
        }
        Op::Div(a, b) => {
            let (x, y) = (val(*a), val(*b));
            if wants(nodes, *a) {
                accumulate(nodes, grads, *a, g.iter().zip(y).map(|(&g, &y)| g / y).collect());
            }
            if wants(nodes, *b) {
                let d = g.iter().zip(x.iter().zip(y)).map(|(&g, (&x, &y))| -g * x / (y * y)).collect();
                accumulate(nodes, grads, *b, d);
            }
        }
        Op::Affine { x, scale } => {
            accumulate(nodes, grads, *x, g.iter().map(|&v| v * *scale).collect());
        }
        Op::AddBias { x, b, channels, inner } => {
            accumulate(nodes, grads, *x, g.to_vec());
            if wants(nodes, *b) {
                let mut db = vec![T::zero(); *channels];
                for (i, chunk) in g.chunks(*inner).enumerate() {
                    db[i % channels] += chunk.iter().copied().sum::<T>();
                }
                accumulate(nodes, grads, *b, db);
            }
        }
        Op::MatMul { a, b, m, k, n } => {
            if wants(nodes, *a) {
                let mut da = vec![T::zero(); m * k];
                linalg::gemm_nt(g, val(*b), &mut da, *m, *n, *k);
                accumulate(nodes, grads, *a, da);
            }
            if wants(nodes, *b) {
                let mut db = vec![T::zero(); k * n];
                linalg::gemm_tn(val(*a), g, &mut db, *k, *m, *n);
                accumulate(nodes, grads, *b, db);
            }
        }
        Op::Transpose { x, rows, cols } => {
            accumulate(nodes, grads, *x, linalg::transpose(g, *cols, *rows));
        }
        Op::Reshape(x) => accumulate(nodes, grads, *x, g.to_vec()),
        Op::Relu(x) => {
            let d = g.iter().zip(val(*x)).map(|(&g, &v)| if v > T::zero() { g } else { T::zero() }).collect();
            accumulate(nodes, grads, *x, d);
        }
        Op::Ln(x) => {
            accumulate(nodes, grads, *x, g.iter().zip(val(*x)).map(|(&g, &v)| g / v).collect());
        }
        Op::Exp(x) => {
            accumulate(nodes, grads, *x, g.iter().zip(&node.value).map(|(&g, &y)| g * y).collect());
        }
        Op::Square(x) => {
            let two = T::c(2.0);
            accumulate(nodes, grads, *x, g.iter().zip(val(*x)).map(|(&g, &v)| two * g * v).collect());
        }
        Op::Sum(x) => accumulate(nodes, grads, *x, vec![g[0]; val(*x).len()]),
        Op::Mean(x) => {
            let len = val(*x).len();
            accumulate(nodes, grads, *x, vec![g[0] / T::from_usize_lossy(len); len]);
        }
        Op::SumLastAxis { x, width } => {
            let d = g.iter().flat_map(|&v| std::iter::repeat_n(v, *width)).collect();
            accumulate(nodes, grads, *x, d);
        }
        Op::LogSoftmax { x, cols } => {
            let mut d = g.to_vec();
            for (drow, yrow) in d.chunks_mut(*cols).zip(node.value.chunks(*cols)) {
                let total: T = drow.iter().copied().sum();
                for (dv, &y) in drow.iter_mut().zip(yrow) {
                    *dv -= y.exp() * total;
                }
            }
            accumulate(nodes, grads, *x, d);
        }
        Op::Conv2d { x, w, geom, batch, out_ch, cols } => {
            let (plen, olen) = (geom.patch_len(), geom.out_len());
            let in_len = geom.channels * geom.height * geom.width;
            let wide = batch * olen;
            let (xv, wv) = (val(*x), val(*w));
            let need_x = wants(nodes, *x);
            let need_w = wants(nodes, *w);
            let mut flat = vec![T::zero(); out_ch * wide];
            for n in 0..*batch {
                for o in 0..*out_ch {
                    flat[o * wide + n * olen..o * wide + (n + 1) * olen]
                        .copy_from_slice(&g[(n * out_ch + o) * olen..(n * out_ch + o + 1) * olen]);
                }
            }
            if need_w {
                let mut dw = vec![T::zero(); wv.len()];
                linalg::gemm_nt(&flat, cols, &mut dw, *out_ch, wide, plen);
                accumulate(nodes, grads, *w, dw);
            }
            if need_x {
                let mut dcols = vec![T::zero(); plen * wide];
                linalg::gemm_tn(wv, &flat, &mut dcols, plen, *out_ch, wide);
                let mut dx = vec![T::zero(); xv.len()];
                for n in 0..*batch {
                    linalg::col2im_strided(&dcols, geom, &mut dx[n * in_len..(n + 1) * in_len], wide, n * olen);
                }
                accumulate(nodes, grads, *x, dx);
            }
        }
        Op::MaxPool2 { x, argmax } => {
            let mut d = vec![T::zero(); val(*x).len()];
            for (&src, &gv) in argmax.iter().zip(g) {
                d[src] += gv;
            }
            accumulate(nodes, grads, *x, d);
        }
        Op::GlobalAvgPool { x, spatial } => {
            let inv = T::one() / T::from_usize_lossy(*spatial);
            let d = g.iter().flat_map(|&v| std::iter::repeat_n(v * inv, *spatial)).collect();
            accumulate(nodes, grads, *x, d);
        }
        Op::BatchNorm { x, gamma, beta, xhat, inv_std, channels, inner, train } => {
            let gam = val(*gamma);
            let c = *channels;
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            let mut sum_dxhat = vec![T::zero(); c];
            let mut sum_dxhat_xhat = vec![T::zero(); c];
            for (i, (gc, hc)) in g.chunks(*inner).zip(xhat.chunks(*inner)).enumerate() {
                let ch = i % c;
                for (&gv, &h) in gc.iter().zip(hc) {
                    dgamma[ch] += gv * h;
                    dbeta[ch] += gv;
                    let dh = gv * gam[ch];
                    sum_dxhat[ch] += dh;
                    sum_dxhat_xhat[ch] += dh * h;
                }
            }
            if wants(nodes, *x) {
                let count = T::from_usize_lossy(g.len() / c);
                let mut dx = vec![T::zero(); g.len()];
                for (i, ((dc, gc), hc)) in dx.chunks_mut(*inner).zip(g.chunks(*inner)).zip(xhat.chunks(*inner)).enumerate() {
                    let ch = i % c;
                    for ((d, &gv), &h) in dc.iter_mut().zip(gc).zip(hc) {
                        let dh = gv * gam[ch];
                        *d = if *train {
                            inv_std[ch] / count * (count * dh - sum_dxhat[ch] - h * sum_dxhat_xhat[ch])
                        } else {
                            dh * inv_std[ch]
                        };
                    }
                }
                accumulate(nodes, grads, *x, dx);
            }
            accumulate(nodes, grads, *gamma, dgamma);
            accumulate(nodes, grads, *beta, dbeta);
        }
        Op::SelectRows { x, idx, width } => {
            let mut d = vec![T::zero(); val(*x).len()];
            for (r, &src) in idx.iter().enumerate() {
                for k in 0..*width {
                    d[src * width + k] += g[r * width + k];
                }
            }
            accumulate(nodes, grads, *x, d);
        }
        Op::RowNorm { x, width } => {
            let xv = val(*x);
            let mut d = vec![T::zero(); xv.len()];
            for (r, (&norm, &gv)) in node.value.iter().zip(g).enumerate() {
                if norm > T::zero() {
                    for k in 0..*width {
                        d[r * width + k] = gv * xv[r * width + k] / norm;
                    }
                }
            }
            accumulate(nodes, grads, *x, d);
        }
        Op::CosineKernel { x, width, eps } => {
            let xv = val(*x);
            let f = *width;
            let n = xv.len() / f.max(1);
            let raw: Vec<T> = (0..n).map(|i| linalg::dot(&xv[i * f..(i + 1) * f], &xv[i * f..(i + 1) * f]).sqrt()).collect();
            let norms: Vec<T> = raw.iter().map(|&r| r + *eps).collect();
            let u: Vec<T> = (0..n * f).map(|t| xv[t] / norms[t / f]).collect();
            // dL/du_i = ½ Σ_j (G_ij + G_ji) u_j
            let half = T::c(0.5);
            let sym: Vec<T> = (0..n * n).map(|t| half * (g[t] + g[(t % n) * n + t / n])).collect();
            let mut du = vec![T::zero(); n * f];
            linalg::gemm_nn(&sym, &u, &mut du, n, n, f);
            let mut dx = vec![T::zero(); n * f];
            for i in 0..n {
                let dui = &du[i * f..(i + 1) * f];
                let xi = &xv[i * f..(i + 1) * f];
                let proj = if raw[i] > T::zero() {
                    linalg::dot(dui, xi) / (norms[i] * norms[i] * raw[i])
                } else {
                    T::zero()
                };
                for k in 0..f {
                    dx[i * f + k] = dui[k] / norms[i] - xi[k] * proj;
                }
            }
            accumulate(nodes, grads, *x, dx);
        }
        Op::TStudentKernel { x, width, degree } => {
            let xv = val(*x);
            let f = *width;
            let n = xv.len() / f.max(1);
            let p = T::from_usize_lossy(*degree as usize);
            let mut dx = vec![T::zero(); n * f];
            for i in 0..n {
                for j in i + 1..n {
                    let (ri, rj) = (&xv[i * f..(i + 1) * f], &xv[j * f..(j + 1) * f]);
                    let d2: T = ri.iter().zip(rj).map(|(&a, &b)| (a - b) * (a - b)).sum();
                    if !(d2 > T::zero()) {
                        continue;
                    }
                    let d = d2.sqrt();
                    let kij = node.value[i * n + j];
                    // dK/dx_i = -p d^(p-2) K² (x_i - x_j)
                    let coef = -(g[i * n + j] + g[j * n + i]) * p * d.powi(*degree as i32 - 2) * kij * kij;
                    for k in 0..f {
                        let diff = coef * (ri[k] - rj[k]);
                        dx[i * f + k] += diff;
                        dx[j * f + k] -= diff;
                    }
                }
            }
            accumulate(nodes, grads, *x, dx);
        }
        Op::CondProb { k, n, floor } => {
            let n = *n;
            let stages = cond_prob_forward(val(*k), n, *floor).expect("validated in forward");
            let r = &node.value;
            let mut dk = vec![T::zero(); n * n];
            let mut dp = vec![T::zero(); n];
            for j in 0..n {
                let mut g_dot_r = T::zero();
                for i in 0..n {
                    if i != j {
                        g_dot_r += g[i * n + j] * r[i * n + j];
                    }
                }
                let mut dp_dot_p = T::zero();
                for i in 0..n {
                    dp[i] = T::zero();
                    if i == j {
                        continue;
                    }
                    let pij = stages.raw[i * n + j];
                    if pij >= *floor {
                        dp[i] = (g[i * n + j] - g_dot_r) / stages.floored_sums[j];
                        dp_dot_p += dp[i] * pij;
                    }
                }
                for i in 0..n {
                    if i != j {
                        dk[i * n + j] = (dp[i] - dp_dot_p) / stages.raw_sums[j];
                    }
                }
            }
            accumulate(nodes, grads, *k, dk);
        }
        Op::Jeffreys { a, b, n } => {
            let (av, bv) = (val(*a), val(*b));
            let n = *n;
            let mut da = vec![T::zero(); n * n];
            let mut db = vec![T::zero(); n * n];
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let t = i * n + j;
                    let (p, q) = (av[t], bv[t]);
                    let log_ratio = p.ln() - q.ln();
                    da[t] = g[0] * (log_ratio + (p - q) / p);
                    db[t] = g[0] * (-log_ratio - (p - q) / q);
                }
            }
            accumulate(nodes, grads, *a, da);
            accumulate(nodes, grads, *b, db);
        }
    }
}
