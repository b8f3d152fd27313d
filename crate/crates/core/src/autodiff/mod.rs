//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every forward op in execution order. Leaves created
//! with [`Tape::leaf`] receive gradients; [`Tape::constant`] values do not,
//! and ops whose inputs are all constants are never visited by
//! [`Tape::backward`].

mod backward;
mod finite_diff;
mod tensor;

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

pub use backward::Gradients;
pub use finite_diff::{finite_diff_gradient, finite_diff_partial};
pub use tensor::Tensor;

use crate::fft::Fft;
use crate::{math, Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Sum(Var),
    Mean(Var),
    Square(Var),
    Sqrt(Var),
    Log(Var, f64),
    Exp(Var),
    Tanh(Var),
    Relu(Var),
    Softmax(Var, usize),
    L2Normalize(Var),
    FrameSlice {
        input: Var,
        win: usize,
        hop: usize,
        window: Option<Arc<[f64]>>,
    },
    Gather(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    BroadcastAdd(Var, Var),
    Reshape(Var),
    Transpose(Var),
    PowerSpectrum {
        input: Var,
        fft: Arc<Fft>,
        // per frame, per bin: (Re X, Im X)
        spectrum: Vec<(f64, f64)>,
    },
    CrossEntropy(Var, Vec<usize>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Norm floor below which [`Tape::l2_normalize`] stops dividing.
pub const L2_NORM_FLOOR: f64 = 1e-12;

/// Default floor for [`Tape::log`] and [`Tape::sqrt`].
pub const DEFAULT_FLOOR: f64 = 1e-10;

/// Ordered record of forward operations.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn invalid(op: &'static str, msg: alloc::string::String) -> Error {
    Error::InvalidOp { op, msg }
}

/// Split a shape around `axis` into (outer, axis length, inner) extents.
fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Trainable input: receives a gradient from [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Fixed input: never differentiated.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Constant, false)
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        debug_assert!(
            !inputs.iter().all(|v| self.value(*v).is_finite()) || value.is_finite(),
            "non-finite output from finite inputs in {op:?}"
        );
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_raw(value, op, requires_grad)
    }

    fn map_unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::from_parts_unchecked(x.shape().to_vec(), data);
        self.push(out, op, &[a])
    }

    fn zip_same(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(mismatch(name, x, y));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let out = Tensor::from_parts_unchecked(x.shape().to_vec(), data);
        Ok(self.push(out, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "add", Op::Add(a, b), |p, q| p + q)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "subtract", Op::Sub(a, b), |p, q| p - q)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "multiply", Op::Mul(a, b), |p, q| p * q)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map_unary(a, Op::Scale(a, c), |v| v * c)
    }

    /// `[m, k] × [k, n] → [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        let ((m, k), (k2, n)) = match (x.dims2(), y.dims2()) {
            (Some(p), Some(q)) if p.1 == q.0 => (p, q),
            _ => return Err(mismatch("matmul", x, y)),
        };
        debug_assert_eq!(k, k2);
        let (xd, yd) = (x.data(), y.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let s = xd[i * k + p];
                let brow = &yd[p * n..(p + 1) * n];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o += s * bv;
                }
            }
        }
        let out = Tensor::from_parts_unchecked(vec![m, n], out);
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(invalid("mean", "empty tensor".into()));
        }
        let m = x.data().iter().sum::<f64>() / x.len() as f64;
        Ok(self.push(Tensor::scalar(m), Op::Mean(a), &[a]))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map_unary(a, Op::Square(a), |v| v * v)
    }

    /// `sqrt(x + floor)`.
    pub fn sqrt(&mut self, a: Var, floor: f64) -> Var {
        self.map_unary(a, Op::Sqrt(a), |v| math::sqrt(v + floor))
    }

    /// `ln(x + floor)`.
    pub fn log(&mut self, a: Var, floor: f64) -> Var {
        self.map_unary(a, Op::Log(a, floor), |v| math::ln(v + floor))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map_unary(a, Op::Exp(a), math::exp)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map_unary(a, Op::Tanh(a), math::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map_unary(a, Op::Relu(a), |v| if v > 0.0 { v } else { 0.0 })
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let x = self.value(a);
        if axis >= x.rank() || x.shape()[axis] == 0 {
            return Err(invalid(
                "softmax",
                format!("axis {axis} invalid for shape {:?}", x.shape()),
            ));
        }
        let (outer, len, inner) = axis_extents(x.shape(), axis);
        let xd = x.data();
        let mut out = vec![0.0; xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let max = (0..len).map(|j| xd[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = math::exp(xd[idx(j)] - max);
                    out[idx(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[idx(j)] /= total;
                }
            }
        }
        let out = Tensor::from_parts_unchecked(x.shape().to_vec(), out);
        Ok(self.push(out, Op::Softmax(a, axis), &[a]))
    }

    /// Normalize each slice along the last axis to unit L2 norm.
    pub fn l2_normalize(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let width = match x.shape().last() {
            Some(&w) if w > 0 => w,
            _ => {
                return Err(invalid(
                    "l2_normalize",
                    format!("needs a non-empty last axis, got {:?}", x.shape()),
                ))
            }
        };
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(width) {
            let norm = math::sqrt(row.iter().map(|v| v * v).sum::<f64>()).max(L2_NORM_FLOOR);
            for v in row {
                *v /= norm;
            }
        }
        let out = Tensor::from_parts_unchecked(x.shape().to_vec(), out);
        Ok(self.push(out, Op::L2Normalize(a), &[a]))
    }

    /// Overlapping frames of a 1-D signal, `[frames, win]`, optionally
    /// multiplied by a per-offset window. Tail samples that do not fill a
    /// whole frame are dropped.
    pub fn frame_slice(
        &mut self,
        a: Var,
        win: usize,
        hop: usize,
        window: Option<Arc<[f64]>>,
    ) -> Result<Var> {
        let x = self.value(a);
        if x.rank() != 1 {
            return Err(invalid("frame_slice", format!("needs rank 1, got {:?}", x.shape())));
        }
        if win == 0 || hop == 0 {
            return Err(invalid("frame_slice", "win and hop must be positive".into()));
        }
        if let Some(w) = &window {
            if w.len() != win {
                return Err(invalid(
                    "frame_slice",
                    format!("window length {} differs from win {win}", w.len()),
                ));
            }
        }
        let len = x.len();
        if len < win {
            return Err(Error::UtteranceTooShort { len, needed: win });
        }
        let frames = (len - win) / hop + 1;
        let xd = x.data();
        let mut out = Vec::with_capacity(frames * win);
        for f in 0..frames {
            let seg = &xd[f * hop..f * hop + win];
            match &window {
                Some(w) => out.extend(seg.iter().zip(w.iter()).map(|(s, w)| s * w)),
                None => out.extend_from_slice(seg),
            }
        }
        let out = Tensor::from_parts_unchecked(vec![frames, win], out);
        Ok(self.push(out, Op::FrameSlice { input: a, win, hop, window }, &[a]))
    }

    /// Flat-index gather into a rank-1 result.
    pub fn gather(&mut self, a: Var, indices: Vec<usize>) -> Result<Var> {
        let x = self.value(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= x.len()) {
            return Err(invalid(
                "gather",
                format!("index {bad} out of range for {} elements", x.len()),
            ));
        }
        let data = indices.iter().map(|&i| x.data()[i]).collect();
        let out = Tensor::vector(data);
        Ok(self.push(out, Op::Gather(a, indices), &[a]))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = match parts.first() {
            Some(v) => self.value(*v),
            None => return Err(invalid("concat", "no inputs".into())),
        };
        if axis >= first.rank() {
            return Err(invalid(
                "concat",
                format!("axis {axis} invalid for shape {:?}", first.shape()),
            ));
        }
        let mut shape = first.shape().to_vec();
        let mut total = 0;
        for v in parts {
            let t = self.value(*v);
            let compatible = t.rank() == shape.len()
                && t.shape()
                    .iter()
                    .zip(&shape)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(mismatch("concat", first, t));
            }
            total += t.shape()[axis];
        }
        shape[axis] = total;
        let (outer, _, inner) = axis_extents(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for v in parts {
                let t = self.value(*v);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let out = Tensor::from_parts_unchecked(shape, out);
        Ok(self.push(out, Op::Concat(parts.to_vec(), axis), parts))
    }

    /// `a[..., j] + b[j]`: adds a vector to every slice along the last axis.
    pub fn broadcast_add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        let width = y.len();
        if y.rank() != 1 || x.shape().last() != Some(&width) {
            return Err(mismatch("broadcast_add", x, y));
        }
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(width) {
            for (o, &bv) in row.iter_mut().zip(y.data()) {
                *o += bv;
            }
        }
        let out = Tensor::from_parts_unchecked(x.shape().to_vec(), out);
        Ok(self.push(out, Op::BroadcastAdd(a, b), &[a, b]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let x = self.value(a);
        if shape.iter().product::<usize>() != x.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: x.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let out = Tensor::from_parts_unchecked(shape.to_vec(), x.data().to_vec());
        Ok(self.push(out, Op::Reshape(a), &[a]))
    }

    /// Rank-2 transpose.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = x
            .dims2()
            .ok_or_else(|| invalid("transpose", format!("needs rank 2, got {:?}", x.shape())))?;
        let xd = x.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xd[i * c + j];
            }
        }
        let out = Tensor::from_parts_unchecked(vec![c, r], out);
        Ok(self.push(out, Op::Transpose(a), &[a]))
    }

    /// `|DFT_n(frame)[k]|²` for `k = 0..=n/2`, each row of `[frames, w]`
    /// zero-padded to `n = n_fft`.
    pub fn power_spectrum(&mut self, a: Var, n_fft: usize) -> Result<Var> {
        self.power_spectrum_with(a, Arc::new(Fft::new(n_fft)))
    }

    pub(crate) fn power_spectrum_with(&mut self, a: Var, fft: Arc<Fft>) -> Result<Var> {
        let x = self.value(a);
        let n = fft.len();
        let (frames, w) = match x.dims2() {
            Some((f, w)) if w <= n => (f, w),
            _ => {
                return Err(invalid(
                    "power_spectrum",
                    format!("frames {:?} do not fit n_fft {n}", x.shape()),
                ))
            }
        };
        let bins = n / 2 + 1;
        let mut out = Vec::with_capacity(frames * bins);
        let mut spectrum = Vec::with_capacity(frames * bins);
        let mut re = vec![0.0; n];
        let mut im = vec![0.0; n];
        for f in 0..frames {
            re[..w].copy_from_slice(&x.data()[f * w..(f + 1) * w]);
            re[w..].fill(0.0);
            im.fill(0.0);
            fft.forward(&mut re, &mut im);
            for k in 0..bins {
                out.push(re[k] * re[k] + im[k] * im[k]);
                spectrum.push((re[k], im[k]));
            }
        }
        let out = Tensor::from_parts_unchecked(vec![frames, bins], out);
        Ok(self.push(
            out,
            Op::PowerSpectrum {
                input: a,
                fft,
                spectrum,
            },
            &[a],
        ))
    }

    /// Mean softmax cross-entropy of `[batch, classes]` logits against
    /// integer targets, computed as `logsumexp(z) - z[y]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let x = self.value(logits);
        let (b, c) = match x.dims2() {
            Some((b, c)) if b == targets.len() && b > 0 && c > 0 => (b, c),
            _ => {
                return Err(invalid(
                    "cross_entropy",
                    format!("logits {:?} vs {} targets", x.shape(), targets.len()),
                ))
            }
        };
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::InvalidClass {
                index: bad,
                classes: c,
            });
        }
        let loss = x
            .data()
            .chunks(c)
            .zip(targets)
            .map(|(row, &y)| log_sum_exp(row) - row[y])
            .sum::<f64>()
            / b as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy(logits, targets.to_vec()),
            &[logits],
        ))
    }

    pub(crate) fn op(&self, var: Var) -> &Op {
        &self.nodes[var.0].op
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + math::ln(row.iter().map(|&v| math::exp(v - max)).sum::<f64>())
}

/// Convenience composite: cosine similarity of two equally-shaped tensors.
pub fn cosine(tape: &mut Tape, u: Var, v: Var) -> Result<Var> {
    let un = tape.l2_normalize(u)?;
    let vn = tape.l2_normalize(v)?;
    let prod = tape.mul(un, vn)?;
    Ok(tape.sum(prod))
}

