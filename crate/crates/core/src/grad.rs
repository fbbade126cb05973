//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every op in creation order, so the node list is already
//! a topological order of the forward pass. Ops whose inputs all lack
//! `requires_grad` are stored as plain constants and never enter the tape.

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::tensor::{check_same, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Forward rule of the spike nonlinearity. Both share the rectangular
/// surrogate as their backward rule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SpikeFn {
    /// Heaviside step: binary spikes.
    #[default]
    Heaviside,
    /// Clamped ramp whose exact derivative is the rectangular surrogate.
    /// Used only for finite-difference verification.
    Ramp,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Conv2d { input: Var, weight: Var, geom: ConvGeom },
    AvgPool2(Var),
    GlobalAvgPool(Var),
    MeanAxis(Var, usize),
    MaxAxis { input: Var, argmax: Vec<usize> },
    Mean(Var),
    Square(Var),
    Log(Var),
    Exp(Var),
    Softmax(Var, f64),
    LogSoftmax(Var, f64),
    Reshape(Var),
    Spike { input: Var, theta: f64, width: f64 },
    CrossEntropy { logits: Var, labels: Vec<usize> },
    SoftKl { target: Var, input: Var, alpha: f64 },
    RowKl { target: Var, input: Var },
    RowCosine(Var, Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul(a, b) | AddBias(a, b) | RowCosine(a, b) => {
                vec![*a, *b]
            }
            Conv2d { input, weight, .. } => vec![*input, *weight],
            SoftKl { target, input, .. } | RowKl { target, input } => vec![*target, *input],
            Scale(a, _)
            | AddScalar(a)
            | AvgPool2(a)
            | GlobalAvgPool(a)
            | MeanAxis(a, _)
            | Mean(a)
            | Square(a)
            | Log(a)
            | Exp(a)
            | Softmax(a, _)
            | LogSoftmax(a, _)
            | Reshape(a) => vec![*a],
            MaxAxis { input, .. } | Spike { input, .. } => vec![*input],
            CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Per-node gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// Floor added to rates before per-sample normalization in [`Graph::row_kl`].
pub const ROW_KL_FLOOR: f64 = 1e-8;

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn softmax_rows(x: &[f64], k: usize, temperature: f64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (row, dst) in x.chunks(k).zip(out.chunks_mut(k)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = ((v - max) / temperature).exp();
            total += *d;
        }
        dst.iter_mut().for_each(|d| *d /= total);
    }
    out
}

fn log_softmax_rows(x: &[f64], k: usize, temperature: f64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (row, dst) in x.chunks(k).zip(out.chunks_mut(k)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|&v| ((v - max) / temperature).exp()).sum::<f64>().ln();
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - max) / temperature - lse;
        }
    }
    out
}

fn last_dim(t: &Tensor) -> usize {
    *t.shape().last().unwrap_or(&1)
}

fn batch_rows(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if t.shape().is_empty() {
        return Err(Error::InvalidShape {
            op,
            msg: "expected a batched tensor, got a scalar".into(),
        });
    }
    let b = t.shape()[0];
    Ok((b, t.len() / b))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Whether `v` carries tape lineage (is produced by a recorded op).
    pub fn has_lineage(&self, v: Var) -> bool {
        !matches!(self.nodes[v.0].op, Op::Leaf)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Same values, no lineage: gradients never flow through the result.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|i| self.nodes[i.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x + s);
        self.push(v, Op::AddScalar(a))
    }

    /// Sum of several equally shaped nodes.
    pub fn sum_all(&mut self, parts: &[Var]) -> Result<Var> {
        let (&first, rest) = parts.split_first().ok_or(Error::InvalidShape {
            op: "sum",
            msg: "no operands".into(),
        })?;
        rest.iter().try_fold(first, |acc, &p| self.add(acc, p))
    }

    /// Elementwise mean of several equally shaped nodes.
    pub fn average(&mut self, parts: &[Var]) -> Result<Var> {
        let total = self.sum_all(parts)?;
        Ok(self.scale(total, 1.0 / parts.len() as f64))
    }

    /// `[m, k] · [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        kernels::gemm(
            m,
            k,
            n,
            1.0,
            self.value(a).data(),
            (k, 1),
            self.value(b).data(),
            (n, 1),
            0.0,
            &mut out,
            (n, 1),
        );
        let v = Tensor::new(vec![m, n], out)?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// Adds `bias[c]` along axis 1 of `x` (`[B, C, ...]`).
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.value(x).shape(), self.value(bias).shape());
        if sx.len() < 2 || sb.len() != 1 || sx[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                left: sx.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (_, c, inner) = axis_split(sx, 1);
        let mut v = self.value(x).clone();
        let bv = self.value(bias).data();
        for (i, chunk) in v.data_mut().chunks_mut(inner).enumerate() {
            let b = bv[i % c];
            chunk.iter_mut().for_each(|e| *e += b);
        }
        Ok(self.push(v, Op::AddBias(x, bias)))
    }

    /// Stride-1 convolution of `[B, C, H, W]` by `[O, C, kh, kw]` with `pad` zeros on each side.
    pub fn conv2d(&mut self, input: Var, weight: Var, pad: usize) -> Result<Var> {
        let (si, sw) = (self.value(input).shape(), self.value(weight).shape());
        let mismatch = || Error::ShapeMismatch {
            op: "conv2d",
            left: si.to_vec(),
            right: sw.to_vec(),
        };
        if si.len() != 4 || sw.len() != 4 || si[1] != sw[1] {
            return Err(mismatch());
        }
        if si[2] + 2 * pad < sw[2] || si[3] + 2 * pad < sw[3] {
            return Err(mismatch());
        }
        let geom = ConvGeom {
            batch: si[0],
            in_ch: si[1],
            height: si[2],
            width: si[3],
            out_ch: sw[0],
            kh: sw[2],
            kw: sw[3],
            pad,
        };
        let out = kernels::conv2d_forward(&geom, self.value(input).data(), self.value(weight).data());
        let v = Tensor::new(vec![geom.batch, geom.out_ch, geom.out_h(), geom.out_w()], out)?;
        Ok(self.push(v, Op::Conv2d { input, weight, geom }))
    }

    /// 2×2 average pooling with stride 2 over `[B, C, H, W]`; H and W must be even.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).shape().to_vec();
        if s.len() != 4 || !s[2].is_multiple_of(2) || !s[3].is_multiple_of(2) {
            return Err(Error::InvalidShape {
                op: "avg_pool2",
                msg: format!("need [B, C, even H, even W], got {s:?}"),
            });
        }
        let out = kernels::avg_pool2_forward(s[0] * s[1], s[2], s[3], self.value(x).data());
        let v = Tensor::new(vec![s[0], s[1], s[2] / 2, s[3] / 2], out)?;
        Ok(self.push(v, Op::AvgPool2(x)))
    }

    /// `[B, C, H, W] -> [B, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).shape().to_vec();
        if s.len() != 4 {
            return Err(Error::InvalidShape {
                op: "global_avg_pool",
                msg: format!("need [B, C, H, W], got {s:?}"),
            });
        }
        let plane = s[2] * s[3];
        let data = self
            .value(x)
            .data()
            .chunks(plane)
            .map(|c| c.iter().sum::<f64>() / plane as f64)
            .collect();
        let v = Tensor::new(vec![s[0], s[1]], data)?;
        Ok(self.push(v, Op::GlobalAvgPool(x)))
    }

    fn reduce_axis(&mut self, x: Var, axis: usize, op: &'static str) -> Result<(Vec<usize>, (usize, usize, usize))> {
        let s = self.value(x).shape();
        if axis >= s.len() {
            return Err(Error::InvalidShape {
                op,
                msg: format!("axis {axis} out of range for shape {s:?}"),
            });
        }
        let mut out_shape = s.to_vec();
        out_shape.remove(axis);
        Ok((out_shape, axis_split(s, axis)))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (out_shape, (outer, len, inner)) = self.reduce_axis(x, axis, "mean_axis")?;
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    out[o * inner + i] += src[base + i];
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= len as f64);
        let v = Tensor::new(out_shape, out)?;
        Ok(self.push(v, Op::MeanAxis(x, axis)))
    }

    /// Max along `axis`; the gradient goes to the first maximal element.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (out_shape, (outer, len, inner)) = self.reduce_axis(x, axis, "max_axis")?;
        let src = self.value(x).data();
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut argmax = vec![0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    if src[base + i] > out[o * inner + i] {
                        out[o * inner + i] = src[base + i];
                        argmax[o * inner + i] = base + i;
                    }
                }
            }
        }
        let v = Tensor::new(out_shape, out)?;
        Ok(self.push(v, Op::MaxAxis { input: x, argmax }))
    }

    /// Mean over all elements, as a scalar.
    pub fn mean(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).mean());
        self.push(v, Op::Mean(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a * a);
        self.push(v, Op::Square(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::ln);
        self.push(v, Op::Log(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::exp);
        self.push(v, Op::Exp(x))
    }

    /// Softmax of `x / temperature` along the last axis.
    pub fn softmax(&mut self, x: Var, temperature: f64) -> Var {
        let t = self.value(x);
        let data = softmax_rows(t.data(), last_dim(t), temperature);
        let v = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(v, Op::Softmax(x, temperature))
    }

    pub fn log_softmax(&mut self, x: Var, temperature: f64) -> Var {
        let t = self.value(x);
        let data = log_softmax_rows(t.data(), last_dim(t), temperature);
        let v = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(v, Op::LogSoftmax(x, temperature))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshape(shape)?;
        Ok(self.push(v, Op::Reshape(x)))
    }

    /// Threshold crossing `x >= theta`, differentiated through the rectangular
    /// surrogate of the given `width`.
    pub fn spike(&mut self, x: Var, theta: f64, width: f64, rule: SpikeFn) -> Var {
        let v = match rule {
            SpikeFn::Heaviside => self.value(x).map(|h| if h >= theta { 1.0 } else { 0.0 }),
            SpikeFn::Ramp => self
                .value(x)
                .map(|h| ((h - theta) / width + 0.5).clamp(0.0, 1.0)),
        };
        self.push(v, Op::Spike { input: x, theta, width })
    }

    /// Mean cross-entropy of `[B, K]` logits against class labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let (b, k) = batch_rows("cross_entropy", t)?;
        if t.shape().len() != 2 || labels.len() != b || labels.iter().any(|&l| l >= k) {
            return Err(Error::InvalidShape {
                op: "cross_entropy",
                msg: format!("logits {:?} vs {} labels (max class {k})", t.shape(), labels.len()),
            });
        }
        let ls = log_softmax_rows(t.data(), k, 1.0);
        let loss = -labels.iter().enumerate().map(|(i, &l)| ls[i * k + l]).sum::<f64>() / b as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
        ))
    }

    /// `alpha² · mean_b KL(softmax(target/α) ‖ softmax(input/α))` over `[B, K]` logits.
    pub fn soft_kl(&mut self, target: Var, input: Var, alpha: f64) -> Result<Var> {
        let (t, x) = (self.value(target), self.value(input));
        check_same("soft_kl", t, x)?;
        let (b, k) = batch_rows("soft_kl", t)?;
        let lp = log_softmax_rows(t.data(), k, alpha);
        let lq = log_softmax_rows(x.data(), k, alpha);
        let kl: f64 = lp.iter().zip(&lq).map(|(&a, &c)| a.exp() * (a - c)).sum();
        let v = Tensor::scalar(alpha * alpha * kl / b as f64);
        Ok(self.push(v, Op::SoftKl { target, input, alpha }))
    }

    /// `KL(q_target ‖ q_input)` per sample, divided by the row length and
    /// averaged over the batch. Each row is shifted by [`ROW_KL_FLOOR`] and
    /// normalized to sum 1. A sample whose target is all zero contributes 0.
    pub fn row_kl(&mut self, target: Var, input: Var) -> Result<Var> {
        let (t, x) = (self.value(target), self.value(input));
        check_same("row_kl", t, x)?;
        let (b, n) = batch_rows("row_kl", t)?;
        let mut total = 0.0;
        for (ta, xa) in t.data().chunks(n).zip(x.data().chunks(n)) {
            if silent(ta) {
                continue;
            }
            let st: f64 = ta.iter().map(|v| v + ROW_KL_FLOOR).sum();
            let sx: f64 = xa.iter().map(|v| v + ROW_KL_FLOOR).sum();
            for (&a, &c) in ta.iter().zip(xa) {
                let qa = (a + ROW_KL_FLOOR) / st;
                let qc = (c + ROW_KL_FLOOR) / sx;
                total += qa * (qa.ln() - qc.ln());
            }
        }
        let v = Tensor::scalar(total / (b * n) as f64);
        Ok(self.push(v, Op::RowKl { target, input }))
    }

    /// `1 − cos(a_b, c_b)` per sample, divided by the row length and averaged
    /// over the batch; a sample with a zero-norm vector contributes 0.
    pub fn row_cosine_distance(&mut self, a: Var, c: Var) -> Result<Var> {
        let (ta, tc) = (self.value(a), self.value(c));
        check_same("row_cosine_distance", ta, tc)?;
        let (b, n) = batch_rows("row_cosine_distance", ta)?;
        let mut total = 0.0;
        for (ra, rc) in ta.data().chunks(n).zip(tc.data().chunks(n)) {
            let (na, nc) = (norm(ra), norm(rc));
            if na > 0.0 && nc > 0.0 {
                total += 1.0 - dot(ra, rc) / (na * nc);
            }
        }
        let v = Tensor::scalar(total / (b * n) as f64);
        Ok(self.push(v, Op::RowCosine(a, c)))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            for (input, grad) in self.input_grads(node, &g)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.data_mut().iter_mut().zip(grad.data()).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(grad),
                }
            }
            // keep the gradient of interior nodes available to callers
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn input_grads(&self, node: &Node, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let val = |v: Var| &self.nodes[v.0].value;
        let shaped = |v: Var, data: Vec<f64>| Tensor::new(val(v).shape().to_vec(), data);
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|x| -x))],
            Op::Mul(a, b) => {
                let mut out = Vec::with_capacity(2);
                if self.wants(*a) {
                    out.push((*a, g.zip_map(val(*b), "mul", |x, y| x * y)?));
                }
                if self.wants(*b) {
                    out.push((*b, g.zip_map(val(*a), "mul", |x, y| x * y)?));
                }
                out
            }
            Op::Scale(a, s) => vec![(*a, g.map(|x| x * s))],
            Op::AddScalar(a) => vec![(*a, g.clone())],
            Op::MatMul(a, b) => {
                let (m, k) = (val(*a).shape()[0], val(*a).shape()[1]);
                let n = val(*b).shape()[1];
                let mut out = Vec::with_capacity(2);
                if self.wants(*a) {
                    let mut ga = vec![0.0; m * k];
                    kernels::gemm(m, n, k, 1.0, g.data(), (n, 1), val(*b).data(), (1, n), 0.0, &mut ga, (k, 1));
                    out.push((*a, shaped(*a, ga)?));
                }
                if self.wants(*b) {
                    let mut gb = vec![0.0; k * n];
                    kernels::gemm(k, m, n, 1.0, val(*a).data(), (1, k), g.data(), (n, 1), 0.0, &mut gb, (n, 1));
                    out.push((*b, shaped(*b, gb)?));
                }
                out
            }
            Op::AddBias(x, bias) => {
                let (_, c, inner) = axis_split(val(*x).shape(), 1);
                let mut gb = vec![0.0; c];
                for (i, chunk) in g.data().chunks(inner).enumerate() {
                    gb[i % c] += chunk.iter().sum::<f64>();
                }
                vec![(*x, g.clone()), (*bias, shaped(*bias, gb)?)]
            }
            Op::Conv2d { input, weight, geom } => {
                let (gi, gw) = kernels::conv2d_backward(
                    geom,
                    val(*input).data(),
                    val(*weight).data(),
                    g.data(),
                    self.wants(*input),
                    self.wants(*weight),
                );
                let mut out = Vec::with_capacity(2);
                if let Some(gi) = gi {
                    out.push((*input, shaped(*input, gi)?));
                }
                if let Some(gw) = gw {
                    out.push((*weight, shaped(*weight, gw)?));
                }
                out
            }
            Op::AvgPool2(x) => {
                let s = val(*x).shape();
                let gx = kernels::avg_pool2_backward(s[0] * s[1], s[2], s[3], g.data());
                vec![(*x, shaped(*x, gx)?)]
            }
            Op::GlobalAvgPool(x) => {
                let s = val(*x).shape();
                let plane = s[2] * s[3];
                let gx = g
                    .data()
                    .iter()
                    .flat_map(|&v| std::iter::repeat_n(v / plane as f64, plane))
                    .collect();
                vec![(*x, shaped(*x, gx)?)]
            }
            Op::MeanAxis(x, axis) => {
                let (outer, len, inner) = axis_split(val(*x).shape(), *axis);
                let mut gx = vec![0.0; val(*x).len()];
                for o in 0..outer {
                    for l in 0..len {
                        for i in 0..inner {
                            gx[(o * len + l) * inner + i] = g.data()[o * inner + i] / len as f64;
                        }
                    }
                }
                vec![(*x, shaped(*x, gx)?)]
            }
            Op::MaxAxis { input, argmax, .. } => {
                let mut gx = vec![0.0; val(*input).len()];
                for (&src, &gv) in argmax.iter().zip(g.data()) {
                    gx[src] += gv;
                }
                vec![(*input, shaped(*input, gx)?)]
            }
            Op::Mean(x) => {
                let n = val(*x).len();
                let gv = g.item() / n as f64;
                vec![(*x, Tensor::full(val(*x).shape(), gv))]
            }
            Op::Square(x) => vec![(*x, g.zip_map(val(*x), "square", |gv, xv| 2.0 * xv * gv)?)],
            Op::Log(x) => vec![(*x, g.zip_map(val(*x), "log", |gv, xv| gv / xv)?)],
            Op::Exp(x) => vec![(*x, g.zip_map(&node.value, "exp", |gv, y| gv * y)?)],
            Op::Softmax(x, temp) => {
                let k = last_dim(&node.value);
                let mut gx = vec![0.0; g.len()];
                for ((y, gr), dst) in node.value.data().chunks(k).zip(g.data().chunks(k)).zip(gx.chunks_mut(k)) {
                    let dotp: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..k {
                        dst[j] = y[j] * (gr[j] - dotp) / temp;
                    }
                }
                vec![(*x, shaped(*x, gx)?)]
            }
            Op::LogSoftmax(x, temp) => {
                let k = last_dim(&node.value);
                let mut gx = vec![0.0; g.len()];
                for ((y, gr), dst) in node.value.data().chunks(k).zip(g.data().chunks(k)).zip(gx.chunks_mut(k)) {
                    let total: f64 = gr.iter().sum();
                    for j in 0..k {
                        dst[j] = (gr[j] - y[j].exp() * total) / temp;
                    }
                }
                vec![(*x, shaped(*x, gx)?)]
            }
            Op::Reshape(x) => vec![(*x, g.reshape(val(*x).shape())?)],
            Op::Spike { input, theta, width } => {
                let gx = g.zip_map(val(*input), "spike", |gv, h| {
                    if (h - theta).abs() < width / 2.0 {
                        gv / width
                    } else {
                        0.0
                    }
                })?;
                vec![(*input, gx)]
            }
            Op::CrossEntropy { logits, labels } => {
                let t = val(*logits);
                let (b, k) = (t.shape()[0], t.shape()[1]);
                let mut gx = softmax_rows(t.data(), k, 1.0);
                for (i, &l) in labels.iter().enumerate() {
                    gx[i * k + l] -= 1.0;
                }
                let scale = g.item() / b as f64;
                gx.iter_mut().for_each(|v| *v *= scale);
                vec![(*logits, shaped(*logits, gx)?)]
            }
            Op::SoftKl { target, input, alpha } => {
                let (b, k) = (val(*input).shape()[0], last_dim(val(*input)));
                let lp = log_softmax_rows(val(*target).data(), k, *alpha);
                let lq = log_softmax_rows(val(*input).data(), k, *alpha);
                let scale = g.item() * alpha / b as f64;
                let mut out = Vec::with_capacity(2);
                if self.wants(*input) {
                    let gi = lp.iter().zip(&lq).map(|(&a, &c)| scale * (c.exp() - a.exp())).collect();
                    out.push((*input, shaped(*input, gi)?));
                }
                if self.wants(*target) {
                    let mut gt = vec![0.0; lp.len()];
                    for ((a, c), dst) in lp.chunks(k).zip(lq.chunks(k)).zip(gt.chunks_mut(k)) {
                        let kl: f64 = a.iter().zip(c).map(|(&x, &y)| x.exp() * (x - y)).sum();
                        for j in 0..k {
                            dst[j] = scale * a[j].exp() * (a[j] - c[j] - kl);
                        }
                    }
                    out.push((*target, shaped(*target, gt)?));
                }
                out
            }
            Op::RowKl { target, input } => {
                let n = val(*input).len() / val(*input).shape()[0];
                let b = val(*input).shape()[0];
                let scale = g.item() / (b * n) as f64;
                let mut gt = vec![0.0; val(*target).len()];
                let mut gi = vec![0.0; val(*input).len()];
                let rows = val(*target).data().chunks(n).zip(val(*input).data().chunks(n));
                for (r, (ta, xa)) in rows.enumerate() {
                    // A floored all-zero target is uniform, and the input gradient would scale as 1/floor.
                    if silent(ta) {
                        continue;
                    }
                    let st: f64 = ta.iter().map(|v| v + ROW_KL_FLOOR).sum();
                    let sx: f64 = xa.iter().map(|v| v + ROW_KL_FLOOR).sum();
                    let mut kl = 0.0;
                    for (&a, &c) in ta.iter().zip(xa) {
                        let qa = (a + ROW_KL_FLOOR) / st;
                        kl += qa * (qa.ln() - ((c + ROW_KL_FLOOR) / sx).ln());
                    }
                    for j in 0..n {
                        let qa = (ta[j] + ROW_KL_FLOOR) / st;
                        let qc = (xa[j] + ROW_KL_FLOOR) / sx;
                        gi[r * n + j] = scale * (1.0 / sx - qa / (xa[j] + ROW_KL_FLOOR));
                        gt[r * n + j] = scale * (qa.ln() - qc.ln() - kl) / st;
                    }
                }
                vec![(*target, shaped(*target, gt)?), (*input, shaped(*input, gi)?)]
            }
            Op::RowCosine(a, c) => {
                let n = val(*a).len() / val(*a).shape()[0];
                let b = val(*a).shape()[0];
                let scale = g.item() / (b * n) as f64;
                let mut ga = vec![0.0; val(*a).len()];
                let mut gc = vec![0.0; val(*c).len()];
                let rows = val(*a).data().chunks(n).zip(val(*c).data().chunks(n));
                for (r, (ra, rc)) in rows.enumerate() {
                    let (na, nc) = (norm(ra), norm(rc));
                    if na == 0.0 || nc == 0.0 {
                        continue;
                    }
                    let cos = dot(ra, rc) / (na * nc);
                    for j in 0..n {
                        ga[r * n + j] = -scale * (rc[j] / (na * nc) - cos * ra[j] / (na * na));
                        gc[r * n + j] = -scale * (ra[j] / (na * nc) - cos * rc[j] / (nc * nc));
                    }
                }
                vec![(*a, shaped(*a, ga)?), (*c, shaped(*c, gc)?)]
            }
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn silent(a: &[f64]) -> bool {
    a.iter().all(|&v| v == 0.0)
}
