use alloc::vec;
use alloc::vec::Vec;

use super::{Op, Tape, Tensor, Var, L2_NORM_FLOOR};
use crate::{math, Error, Result};

/// Gradients of one scalar output with respect to every leaf on the tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `var`, or `None` if it does not require grad.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.index()).and_then(Option::as_ref)
    }

    pub fn wrt(&self, var: Var) -> Result<&Tensor> {
        self.get(var).ok_or_else(|| Error::InvalidOp {
            op: "backward",
            msg: alloc::format!("node {} is not a differentiable leaf", var.index()),
        })
    }
}

fn slot<'a>(grads: &'a mut [Option<Tensor>], tape: &Tape, var: Var) -> Option<&'a mut [f64]> {
    if !tape.requires_grad(var) {
        return None;
    }
    let entry = &mut grads[var.index()];
    if entry.is_none() {
        *entry = Some(Tensor::zeros(tape.value(var).shape()));
    }
    entry.as_mut().map(Tensor::data_mut)
}

impl Tape {
    /// Reverse sweep from a scalar `output`.
    ///
    /// Every leaf created with [`Tape::leaf`] gets a gradient; leaves not
    /// reachable from `output` get zeros. Multiple consumers of a node
    /// accumulate by addition.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.is_empty() {
            return Err(Error::EmptyTape);
        }
        let out = self.value(output);
        if out.len() != 1 {
            return Err(Error::NonScalarOutput(out.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.len()];
        if self.requires_grad(output) {
            grads[output.index()] = Some(Tensor::filled(out.shape(), 1.0));
        }
        for idx in (0..=output.index()).rev() {
            let node = Var(idx);
            if matches!(self.op(node), Op::Leaf | Op::Constant) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        for idx in 0..self.len() {
            if matches!(self.op(Var(idx)), Op::Leaf) && grads[idx].is_none() {
                grads[idx] = Some(Tensor::zeros(self.value(Var(idx)).shape()));
            } else if !matches!(self.op(Var(idx)), Op::Leaf) {
                grads[idx] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: Var, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        let y = self.value(node).data();
        match self.op(node) {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                for (v, s) in [(*a, 1.0), (*b, 1.0)] {
                    if let Some(ga) = slot(grads, self, v) {
                        ga.iter_mut().zip(gd).for_each(|(o, &d)| *o += s * d);
                    }
                }
            }
            Op::Sub(a, b) => {
                for (v, s) in [(*a, 1.0), (*b, -1.0)] {
                    if let Some(ga) = slot(grads, self, v) {
                        ga.iter_mut().zip(gd).for_each(|(o, &d)| *o += s * d);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (xa, xb) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = slot(grads, self, *a) {
                    for ((o, &d), &q) in ga.iter_mut().zip(gd).zip(xb) {
                        *o += d * q;
                    }
                }
                if let Some(gb) = slot(grads, self, *b) {
                    for ((o, &d), &p) in gb.iter_mut().zip(gd).zip(xa) {
                        *o += d * p;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = slot(grads, self, *a) {
                    ga.iter_mut().zip(gd).for_each(|(o, &d)| *o += c * d);
                }
            }
            Op::MatMul(a, b) => {
                let (xa, xb) = (self.value(*a), self.value(*b));
                let (m, k) = xa.dims2().expect("matmul lhs is rank 2");
                let n = xb.dims2().expect("matmul rhs is rank 2").1;
                let (ad, bd) = (xa.data(), xb.data());
                if let Some(ga) = slot(grads, self, *a) {
                    // dA = G · Bᵀ
                    for i in 0..m {
                        let grow = &gd[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if let Some(gb) = slot(grads, self, *b) {
                    // dB = Aᵀ · G
                    for i in 0..m {
                        let grow = &gd[i * n..(i + 1) * n];
                        for p in 0..k {
                            let s = ad[i * k + p];
                            let brow = &mut gb[p * n..(p + 1) * n];
                            brow.iter_mut().zip(grow).for_each(|(o, &d)| *o += s * d);
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = slot(grads, self, *a) {
                    ga.iter_mut().for_each(|o| *o += gd[0]);
                }
            }
            Op::Mean(a) => {
                if let Some(ga) = slot(grads, self, *a) {
                    let s = gd[0] / ga.len() as f64;
                    ga.iter_mut().for_each(|o| *o += s);
                }
            }
            Op::Square(a) => {
                let x = self.value(*a).data();
                if let Some(ga) = slot(grads, self, *a) {
                    for ((o, &d), &v) in ga.iter_mut().zip(gd).zip(x) {
                        *o += 2.0 * v * d;
                    }
                }
            }
            Op::Sqrt(a) => {
                if let Some(ga) = slot(grads, self, *a) {
                    for ((o, &d), &r) in ga.iter_mut().zip(gd).zip(y) {
                        *o += d / (2.0 * r);
                    }
                }
            }
            Op::Log(a, floor) => {
                let x = self.value(*a).data();
                if let Some(ga) = slot(grads, self, *a) {
                    for ((o, &d), &v) in ga.iter_mut().zip(gd).zip(x) {
                        *o += d / (v + floor);
                    }
                }
            }
            Op::Exp(a) => {
                if let Some(ga) = slot(grads, self, *a) {
                    for ((o, &d), &e) in ga.iter_mut().zip(gd).zip(y) {
                        *o += d * e;
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = slot(grads, self, *a) {
                    for ((o, &d), &t) in ga.iter_mut().zip(gd).zip(y) {
                        *o += d * (1.0 - t * t);
                    }
                }
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                if let Some(ga) = slot(grads, self, *a) {
                    for ((o, &d), &v) in ga.iter_mut().zip(gd).zip(x) {
                        if v > 0.0 {
                            *o += d;
                        }
                    }
                }
            }
            Op::Softmax(a, axis) => {
                let shape = self.value(*a).shape();
                let (outer, len, inner) = super::axis_extents(shape, *axis);
                if let Some(ga) = slot(grads, self, *a) {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |j: usize| (o * len + j) * inner + i;
                            let dot: f64 = (0..len).map(|j| gd[idx(j)] * y[idx(j)]).sum();
                            for j in 0..len {
                                ga[idx(j)] += y[idx(j)] * (gd[idx(j)] - dot);
                            }
                        }
                    }
                }
            }
            Op::L2Normalize(a) => {
                let x = self.value(*a);
                let width = *x.shape().last().expect("non-empty last axis");
                let xd = x.data();
                if let Some(ga) = slot(grads, self, *a) {
                    for ((grow, (xrow, yrow)), drow) in ga
                        .chunks_mut(width)
                        .zip(xd.chunks(width).zip(y.chunks(width)))
                        .zip(gd.chunks(width))
                    {
                        let raw = math::sqrt(xrow.iter().map(|v| v * v).sum::<f64>());
                        let norm = raw.max(L2_NORM_FLOOR);
                        let dot = if raw >= L2_NORM_FLOOR {
                            drow.iter().zip(yrow).map(|(d, v)| d * v).sum::<f64>()
                        } else {
                            0.0
                        };
                        for ((o, &d), &v) in grow.iter_mut().zip(drow).zip(yrow) {
                            *o += (d - v * dot) / norm;
                        }
                    }
                }
            }
            Op::FrameSlice {
                input,
                win,
                hop,
                window,
            } => {
                if let Some(ga) = slot(grads, self, *input) {
                    for (f, drow) in gd.chunks(*win).enumerate() {
                        let seg = &mut ga[f * hop..f * hop + win];
                        match window {
                            Some(w) => {
                                for ((o, &d), &wv) in seg.iter_mut().zip(drow).zip(w.iter()) {
                                    *o += d * wv;
                                }
                            }
                            None => seg.iter_mut().zip(drow).for_each(|(o, &d)| *o += d),
                        }
                    }
                }
            }
            Op::Gather(a, indices) => {
                if let Some(ga) = slot(grads, self, *a) {
                    for (&i, &d) in indices.iter().zip(gd) {
                        ga[i] += d;
                    }
                }
            }
            Op::Concat(parts, axis) => {
                let shape = self.value(node).shape();
                let (outer, _, inner) = super::axis_extents(shape, *axis);
                let mut offset = 0;
                for o in 0..outer {
                    for v in parts {
                        let chunk = self.value(*v).shape()[*axis] * inner;
                        if let Some(gp) = slot(grads, self, *v) {
                            gp[o * chunk..(o + 1) * chunk]
                                .iter_mut()
                                .zip(&gd[offset..offset + chunk])
                                .for_each(|(p, &d)| *p += d);
                        }
                        offset += chunk;
                    }
                }
            }
            Op::BroadcastAdd(a, b) => {
                if let Some(ga) = slot(grads, self, *a) {
                    ga.iter_mut().zip(gd).for_each(|(o, &d)| *o += d);
                }
                let width = self.value(*b).len();
                if let Some(gb) = slot(grads, self, *b) {
                    for row in gd.chunks(width) {
                        gb.iter_mut().zip(row).for_each(|(o, &d)| *o += d);
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = slot(grads, self, *a) {
                    ga.iter_mut().zip(gd).for_each(|(o, &d)| *o += d);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = self.value(*a).dims2().expect("transpose input is rank 2");
                if let Some(ga) = slot(grads, self, *a) {
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += gd[j * r + i];
                        }
                    }
                }
            }
            Op::PowerSpectrum {
                input,
                fft,
                spectrum,
            } => {
                let (_, w) = self.value(*input).dims2().expect("frames are rank 2");
                let n = fft.len();
                let bins = n / 2 + 1;
                if let Some(ga) = slot(grads, self, *input) {
                    let mut re = vec![0.0; n];
                    let mut im = vec![0.0; n];
                    for (f, (drow, srow)) in gd.chunks(bins).zip(spectrum.chunks(bins)).enumerate() {
                        // dP_k/dx_j = Re(2·X_k·e^{+2πijk/n}); sum over k with an
                        // unnormalized inverse transform.
                        re.fill(0.0);
                        im.fill(0.0);
                        for (k, (&d, &(xr, xi))) in drow.iter().zip(srow).enumerate() {
                            re[k] = 2.0 * d * xr;
                            im[k] = 2.0 * d * xi;
                        }
                        fft.inverse_unnormalized(&mut re, &mut im);
                        ga[f * w..(f + 1) * w]
                            .iter_mut()
                            .zip(&re[..w])
                            .for_each(|(o, &v)| *o += v);
                    }
                }
            }
            Op::CrossEntropy(a, targets) => {
                let x = self.value(*a);
                let c = x.dims2().expect("logits are rank 2").1;
                let b = targets.len() as f64;
                if let Some(ga) = slot(grads, self, *a) {
                    for ((grow, row), &t) in ga.chunks_mut(c).zip(x.data().chunks(c)).zip(targets) {
                        let lse = super::log_sum_exp(row);
                        for (j, (o, &z)) in grow.iter_mut().zip(row).enumerate() {
                            let p = math::exp(z - lse);
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            *o += gd[0] * (p - onehot) / b;
                        }
                    }
                }
            }
        }
    }
}
