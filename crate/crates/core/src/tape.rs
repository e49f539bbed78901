//! Reverse-mode automatic differentiation over [`Grid4`] values.
//!
//! A [`Tape`] records every primitive as it executes. Each recorded node
//! owns its forward value and, after [`Tape::backward`], the gradient of the
//! loss with respect to that value. Backward replays the record in exact
//! reverse execution order.
//!
//! ```
//! use dan::{Grid4, Shape, Tape};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Grid4::from_vec(Shape::new(1, 1, 1, 3), vec![1.0, -2.0, 3.0]).unwrap());
//! let loss = tape.sum_squares(x);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap(), &[2.0, -4.0, 6.0]);
//! ```

use crate::conv::{self, ConvGeometry, Padding};
use crate::error::{Error, Result};
use crate::grid::{Grid4, LabelMap, Shape, IGNORE_LABEL};
use crate::norm::kernel::{self as norm_kernel, NormCache, NormPlan};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        geom: ConvGeometry,
    },
    AddBias {
        input: Var,
        bias: Var,
    },
    Relu {
        input: Var,
    },
    Norm {
        input: Var,
        gamma: Var,
        beta: Var,
        cache: NormCache,
    },
    SliceN {
        input: Var,
        start: usize,
    },
    ConcatN {
        inputs: Vec<Var>,
    },
    AddConst {
        input: Var,
    },
    SoftmaxCe {
        logits: Var,
        probs: Vec<f64>,
        labels: Vec<u8>,
        count: usize,
    },
    SigmoidBce {
        logits: Var,
        targets: Vec<f64>,
    },
    Axpby {
        a: Var,
        b: Var,
        ca: f64,
        cb: f64,
    },
    SumSquares {
        input: Var,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::AddBias { .. } => "add_bias",
            Op::Relu { .. } => "relu",
            Op::Norm { .. } => "norm",
            Op::SliceN { .. } => "slice_n",
            Op::ConcatN { .. } => "concat_n",
            Op::AddConst { .. } => "add_const",
            Op::SoftmaxCe { .. } => "softmax_ce",
            Op::SigmoidBce { .. } => "sigmoid_bce",
            Op::Axpby { .. } => "axpby",
            Op::SumSquares { .. } => "sum_squares",
        }
    }
}

struct Node {
    value: Grid4,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    last_backward: Vec<usize>,
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

    /// Drops every recorded node. Handles issued before the call are invalid.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.last_backward.clear();
    }

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Grid4) -> Var {
        self.push_node(value.detached(), true, Op::Leaf)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Grid4) -> Var {
        self.push_node(value.detached(), false, Op::Leaf)
    }

    /// Constant copy of `v`: gradients stop here.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.detached();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Grid4 {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass; `None` when no gradient reached `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes.get(v.0).and_then(|n| n.grad.as_deref())
    }

    /// Like [`Tape::grad`] but materializes zeros for untouched or stale handles.
    pub fn grad_or_zero(&self, v: Var) -> Vec<f64> {
        match self.nodes.get(v.0) {
            Some(node) => node
                .grad
                .clone()
                .unwrap_or_else(|| vec![0.0; node.value.shape().len()]),
            None => Vec::new(),
        }
    }

    /// Operation names in recording order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|n| n.op.name()).collect()
    }

    /// Node indices visited by the most recent backward pass, in visit order.
    pub fn last_backward_order(&self) -> &[usize] {
        &self.last_backward
    }

    fn push_node(&mut self, value: Grid4, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Grid4, inputs: &[Var], op: Op) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_node(value, requires_grad, op)
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: Padding) -> Result<Var> {
        let geom = ConvGeometry::new(
            self.value(input).shape(),
            self.value(kernel).shape(),
            stride,
            padding,
        )?;
        let out = conv::conv2d_forward(self.value(input), self.value(kernel), &geom);
        Ok(self.push(out, &[input, kernel], Op::Conv2d { input, kernel, geom }))
    }

    /// Adds a `1 x 1 x 1 x C` bias to every position.
    pub fn add_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let s = self.value(input).shape();
        let b = self.value(bias);
        if b.shape() != Shape::channels(s.c) {
            return Err(Error::shape(format!(
                "bias {} for input {s}",
                b.shape()
            )));
        }
        let bv = b.data().to_vec();
        let mut out = self.value(input).detached();
        for row in out.data_mut().chunks_exact_mut(s.c) {
            for (v, b) in row.iter_mut().zip(&bv) {
                *v += b;
            }
        }
        Ok(self.push(out, &[input, bias], Op::AddBias { input, bias }))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let mut out = self.value(input).detached();
        for v in out.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        self.push(out, &[input], Op::Relu { input })
    }

    pub(crate) fn normalize(&mut self, input: Var, gamma: Var, beta: Var, plan: &NormPlan) -> Result<Var> {
        let (out, cache) = norm_kernel::forward(
            self.value(input),
            self.value(gamma),
            self.value(beta),
            plan,
        )?;
        Ok(self.push(
            out,
            &[input, gamma, beta],
            Op::Norm {
                input,
                gamma,
                beta,
                cache,
            },
        ))
    }

    pub(crate) fn norm_cache(&self, v: Var) -> Option<&NormCache> {
        match &self.nodes[v.0].op {
            Op::Norm { cache, .. } => Some(cache),
            _ => None,
        }
    }

    pub fn slice_n(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let out = self.value(input).slice_n(start, len)?;
        Ok(self.push(out, &[input], Op::SliceN { input, start }))
    }

    pub fn concat_n(&mut self, inputs: &[Var]) -> Result<Var> {
        let parts: Vec<&Grid4> = inputs.iter().map(|v| self.value(*v)).collect();
        let out = Grid4::concat_n(&parts)?;
        Ok(self.push(
            out,
            inputs,
            Op::ConcatN {
                inputs: inputs.to_vec(),
            },
        ))
    }

    /// Adds a constant offset grid; the gradient passes through unchanged.
    pub fn add_const(&mut self, input: Var, offset: &Grid4) -> Result<Var> {
        let s = self.value(input).shape();
        if offset.shape() != s {
            return Err(Error::shape(format!("offset {} for input {s}", offset.shape())));
        }
        let mut out = self.value(input).detached();
        for (v, o) in out.data_mut().iter_mut().zip(offset.data()) {
            *v += o;
        }
        Ok(self.push(out, &[input], Op::AddConst { input }))
    }

    /// Mean pixel-wise softmax cross entropy over non-ignored labels.
    ///
    /// Pixels labeled [`IGNORE_LABEL`] contribute neither loss nor gradient;
    /// with every pixel ignored the loss is zero.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &LabelMap) -> Result<Var> {
        let s = self.value(logits).shape();
        if labels.dims() != (s.n, s.h, s.w) {
            let (n, h, w) = labels.dims();
            return Err(Error::shape(format!(
                "labels {n}x{h}x{w} for logits {s}"
            )));
        }
        let k = s.c;
        for &l in labels.data() {
            if l != IGNORE_LABEL && l as usize >= k {
                return Err(Error::Label {
                    label: l,
                    classes: k,
                });
            }
        }
        let z = self.value(logits).data();
        let mut probs = vec![0.0; z.len()];
        let mut total = 0.0;
        let mut count = 0usize;
        for (i, &l) in labels.data().iter().enumerate() {
            let row = &z[i * k..(i + 1) * k];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            let p = &mut probs[i * k..(i + 1) * k];
            for (p, &v) in p.iter_mut().zip(row) {
                *p = (v - m).exp();
                sum += *p;
            }
            for p in p.iter_mut() {
                *p /= sum;
            }
            if l != IGNORE_LABEL {
                total += m + sum.ln() - row[l as usize];
                count += 1;
            }
        }
        let loss = if count > 0 { total / count as f64 } else { 0.0 };
        Ok(self.push(
            Grid4::scalar(loss),
            &[logits],
            Op::SoftmaxCe {
                logits,
                probs,
                labels: labels.data().to_vec(),
                count,
            },
        ))
    }

    /// Mean binary cross entropy between `sigmoid(logits)` and `targets`.
    ///
    /// `logits` must have one channel; `targets` holds one 0/1 value per
    /// spatial position. Evaluated as `max(l, 0) - l t + ln(1 + e^{-|l|})`.
    pub fn sigmoid_bce(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let s = self.value(logits).shape();
        if s.c != 1 || targets.len() != s.n * s.h * s.w {
            return Err(Error::shape(format!(
                "{} targets for logits {s} (one channel expected)",
                targets.len()
            )));
        }
        if let Some(t) = targets.iter().find(|t| **t != 0.0 && **t != 1.0) {
            return Err(Error::invalid(format!("binary target {t} not in {{0, 1}}")));
        }
        let z = self.value(logits).data();
        let total: f64 = z
            .iter()
            .zip(targets)
            .map(|(&l, &t)| l.max(0.0) - l * t + (-l.abs()).exp().ln_1p())
            .sum();
        let loss = total / z.len() as f64;
        Ok(self.push(
            Grid4::scalar(loss),
            &[logits],
            Op::SigmoidBce {
                logits,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Elementwise `ca * a + cb * b` on equally shaped values.
    pub fn axpby(&mut self, ca: f64, a: Var, cb: f64, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(format!("axpby of {sa} and {sb}")));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| ca * x + cb * y)
            .collect();
        let out = Grid4::from_vec(sa, data)?;
        Ok(self.push(out, &[a, b], Op::Axpby { a, b, ca, cb }))
    }

    /// Sum of squared entries, as a scalar.
    pub fn sum_squares(&mut self, input: Var) -> Var {
        let s: f64 = self.value(input).data().iter().map(|v| v * v).sum();
        self.push(Grid4::scalar(s), &[input], Op::SumSquares { input })
    }

    /// Populates gradients of the scalar `loss` for every node that depends
    /// on a differentiable leaf. Previous gradients are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).shape() != Shape::scalar() {
            return Err(Error::shape(format!(
                "backward from non-scalar {}",
                self.value(loss).shape()
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.last_backward.clear();
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(dy) = self.nodes[i].grad.take() else {
                continue;
            };
            self.last_backward.push(i);
            self.backprop_node(i, &dy);
            self.nodes[i].grad = Some(dy);
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn accumulate(&mut self, v: Var, contribution: Vec<f64>) {
        let node = &mut self.nodes[v.0];
        match &mut node.grad {
            Some(g) => {
                for (a, c) in g.iter_mut().zip(contribution) {
                    *a += c;
                }
            }
            None => node.grad = Some(contribution),
        }
    }

    fn backprop_node(&mut self, i: usize, dy: &[f64]) {
        let mut updates: Vec<(Var, Vec<f64>)> = Vec::new();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                geom,
            } => {
                let (input, kernel) = (*input, *kernel);
                let x = self.value(input).data();
                let k = self.value(kernel).data();
                let mut dx = self.wants(input).then(|| vec![0.0; x.len()]);
                let mut dk = self.wants(kernel).then(|| vec![0.0; k.len()]);
                conv::conv2d_backward(x, k, geom, dy, dx.as_deref_mut(), dk.as_deref_mut());
                updates.extend(dx.map(|g| (input, g)));
                updates.extend(dk.map(|g| (kernel, g)));
            }
            Op::AddBias { input, bias } => {
                let c = self.value(*bias).shape().c;
                if self.wants(*input) {
                    updates.push((*input, dy.to_vec()));
                }
                if self.wants(*bias) {
                    let mut db = vec![0.0; c];
                    for row in dy.chunks_exact(c) {
                        for (a, d) in db.iter_mut().zip(row) {
                            *a += d;
                        }
                    }
                    updates.push((*bias, db));
                }
            }
            Op::Relu { input } => {
                if self.wants(*input) {
                    let x = self.value(*input).data();
                    let dx = x
                        .iter()
                        .zip(dy)
                        .map(|(&x, &d)| if x > 0.0 { d } else { 0.0 })
                        .collect();
                    updates.push((*input, dx));
                }
            }
            Op::Norm {
                input,
                gamma,
                beta,
                cache,
            } => {
                let (input, gamma, beta) = (*input, *gamma, *beta);
                let x = self.value(input);
                let gv = self.value(gamma).data();
                let mut dx = self.wants(input).then(|| vec![0.0; x.data().len()]);
                let mut dg = self.wants(gamma).then(|| vec![0.0; gv.len()]);
                let mut db = self.wants(beta).then(|| vec![0.0; gv.len()]);
                norm_kernel::backward(
                    x,
                    gv,
                    cache,
                    dy,
                    dx.as_deref_mut(),
                    dg.as_deref_mut(),
                    db.as_deref_mut(),
                );
                updates.extend(dx.map(|g| (input, g)));
                updates.extend(dg.map(|g| (gamma, g)));
                updates.extend(db.map(|g| (beta, g)));
            }
            Op::SliceN { input, start } => {
                if self.wants(*input) {
                    let s = self.value(*input).shape();
                    let mut dx = vec![0.0; s.len()];
                    let off = start * s.sample_len();
                    dx[off..off + dy.len()].copy_from_slice(dy);
                    updates.push((*input, dx));
                }
            }
            Op::ConcatN { inputs } => {
                let mut off = 0;
                for v in inputs {
                    let len = self.value(*v).shape().len();
                    if self.wants(*v) {
                        updates.push((*v, dy[off..off + len].to_vec()));
                    }
                    off += len;
                }
            }
            Op::AddConst { input } => {
                if self.wants(*input) {
                    updates.push((*input, dy.to_vec()));
                }
            }
            Op::SoftmaxCe {
                logits,
                probs,
                labels,
                count,
            } => {
                if self.wants(*logits) {
                    let k = self.value(*logits).shape().c;
                    let mut dz = vec![0.0; probs.len()];
                    if *count > 0 {
                        let scale = dy[0] / *count as f64;
                        for (i, &l) in labels.iter().enumerate() {
                            if l == IGNORE_LABEL {
                                continue;
                            }
                            for j in 0..k {
                                let onehot = if j == l as usize { 1.0 } else { 0.0 };
                                dz[i * k + j] = (probs[i * k + j] - onehot) * scale;
                            }
                        }
                    }
                    updates.push((*logits, dz));
                }
            }
            Op::SigmoidBce { logits, targets } => {
                if self.wants(*logits) {
                    let z = self.value(*logits).data();
                    let scale = dy[0] / z.len() as f64;
                    let dz = z
                        .iter()
                        .zip(targets)
                        .map(|(&l, &t)| (sigmoid(l) - t) * scale)
                        .collect();
                    updates.push((*logits, dz));
                }
            }
            Op::Axpby { a, b, ca, cb } => {
                if self.wants(*a) {
                    updates.push((*a, dy.iter().map(|d| ca * d).collect()));
                }
                if self.wants(*b) {
                    updates.push((*b, dy.iter().map(|d| cb * d).collect()));
                }
            }
            Op::SumSquares { input } => {
                if self.wants(*input) {
                    let x = self.value(*input).data();
                    updates.push((*input, x.iter().map(|v| 2.0 * v * dy[0]).collect()));
                }
            }
        }
        for (v, g) in updates {
            self.accumulate(v, g);
        }
    }
}

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
