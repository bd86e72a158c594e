use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    Offset(Var),
    MatMul(Var, Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Log(Var),
    Exp(Var),
    Square(Var),
    Sqrt(Var),
    Clamp { input: Var, lo: f64, hi: f64 },
    Sum(Var),
    Mean(Var),
    SumAxis { input: Var, axis: usize },
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Dynamic tape for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the tape is always a valid
/// topological order and [`Graph::backward`] is a single reverse sweep.
/// A graph is rebuilt for every forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient; all zeros if nothing reached `v`.
    pub fn grad(&self, v: Var) -> Tensor {
        let node = &self.nodes[v.0];
        let data = node
            .grad
            .clone()
            .unwrap_or_else(|| vec![0.0; node.value.numel()]);
        Tensor::from_parts(node.value.shape().to_vec(), data)
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ---- elementwise binary ops with broadcasting ----

    fn binary(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let value = if sa == sb {
            let (x, y) = (self.value(a).data(), self.value(b).data());
            let data = x.iter().zip(y).map(|(&p, &q)| f(p, q)).collect();
            Tensor::from_parts(sa, data)
        } else {
            let out = broadcast_shape(op_name, &sa, &sb)?;
            let (ta, tb) = (bstrides(&sa, &out), bstrides(&sb, &out));
            let (x, y) = (self.value(a).data(), self.value(b).data());
            let mut data = vec![0.0; out.iter().product()];
            for_each_broadcast(&out, &ta, &tb, |o, i, j| data[o] = f(x[i], y[j]));
            Tensor::from_parts(out, data)
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, rg, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    // ---- unary ops ----

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::from_parts(t.shape().to_vec(), data);
        let rg = self.rg(&[a]);
        self.push(value, rg, op)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |x| x * k, Op::Scale(a, k))
    }

    /// `a + c` for a constant `c`.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::Offset(a))
    }

    /// `c - a` for a constant `c`.
    pub fn rsub(&mut self, c: f64, a: Var) -> Var {
        let n = self.neg(a);
        self.offset(n, c)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    /// Clamp into `[lo, hi]`; the gradient is zero where the bound is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp { input: a, lo, hi })
    }

    // ---- reductions ----

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), rg, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), rg, Op::Mean(a))
    }

    /// Sum over `axis`, keeping it as a dimension of size one.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::InvalidShape {
                op: "sum_axis",
                detail: format!("axis {axis} out of range for shape {shape:?}"),
            });
        }
        let (outer, dim, inner) = split_axis(&shape, axis);
        let x = self.value(a).data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for d in 0..dim {
                let src = &x[(o * dim + d) * inner..(o * dim + d + 1) * inner];
                let dst = &mut data[o * inner..(o + 1) * inner];
                for (t, s) in dst.iter_mut().zip(src) {
                    *t += s;
                }
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = 1;
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::from_parts(out_shape, data),
            rg,
            Op::SumAxis { input: a, axis },
        ))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let n = *self.shape(a).get(axis).ok_or_else(|| Error::InvalidShape {
            op: "mean_axis",
            detail: format!("axis {axis} out of range"),
        })?;
        let s = self.sum_axis(a, axis)?;
        Ok(self.scale(s, 1.0 / n as f64))
    }

    // ---- structural ops ----

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), rg, Op::MatMul(a, b)))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::InvalidShape {
            op: "concat",
            detail: "no inputs".into(),
        })?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::InvalidShape {
                op: "concat",
                detail: format!("axis {axis} out of range for shape {base:?}"),
            });
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = split_axis(&out_shape, axis);
        let mut data = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for p in parts {
                let t = self.value(*p);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::from_parts(out_shape, data),
            rg,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start >= end || end > shape[axis] {
            return Err(Error::InvalidShape {
                op: "slice",
                detail: format!("range {start}..{end} on axis {axis} of shape {shape:?}"),
            });
        }
        let (outer, dim, inner) = split_axis(&shape, axis);
        let x = self.value(a).data();
        let width = (end - start) * inner;
        let mut data = Vec::with_capacity(outer * width);
        for o in 0..outer {
            let base = o * dim * inner + start * inner;
            data.extend_from_slice(&x[base..base + width]);
        }
        let mut out_shape = shape;
        out_shape[axis] = end - start;
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::from_parts(out_shape, data),
            rg,
            Op::Slice {
                input: a,
                axis,
                start,
            },
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if shape.iter().product::<usize>() != t.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: t.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let value = Tensor::from_parts(shape.to_vec(), t.data().to_vec());
        let rg = self.rg(&[a]);
        Ok(self.push(value, rg, Op::Reshape(a)))
    }

    // ---- backward ----

    /// Accumulates `d loss / d v` into every `requires_grad` node reachable
    /// from `loss`. Call [`Graph::zero_grad`] first for fresh gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let t = self.value(loss);
        if !t.is_scalar() {
            return Err(Error::NonScalarLoss(t.shape().to_vec()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        // Only leaves accumulate across calls.
        for node in &mut self.nodes[..=loss.0] {
            if !matches!(node.op, Op::Leaf) {
                node.grad = None;
            }
        }
        self.add_grad(loss, |g| g[0] += 1.0);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gout) = self.nodes[i].grad.take() else {
                continue;
            };
            let op = self.nodes[i].op.clone();
            self.propagate(i, &op, &gout);
            self.nodes[i].grad = Some(gout);
        }
        Ok(())
    }

    fn add_grad(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.numel();
        let mut buf = self.nodes[v.0].grad.take().unwrap_or_else(|| vec![0.0; n]);
        f(&mut buf);
        self.nodes[v.0].grad = Some(buf);
    }

    /// Like [`Graph::add_grad`] but the closure may read node values.
    fn add_grad_with(&mut self, v: Var, f: impl FnOnce(&[Node], &mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.numel();
        let mut buf = self.nodes[v.0].grad.take().unwrap_or_else(|| vec![0.0; n]);
        f(&self.nodes, &mut buf);
        self.nodes[v.0].grad = Some(buf);
    }

    fn propagate(&mut self, i: usize, op: &Op, g: &[f64]) {
        let out_shape = self.nodes[i].value.shape().to_vec();
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.reduce_into(a, &out_shape, g, |_, _, gv| gv);
                self.reduce_into(b, &out_shape, g, |_, _, gv| gv);
            }
            Op::Sub(a, b) => {
                self.reduce_into(a, &out_shape, g, |_, _, gv| gv);
                self.reduce_into(b, &out_shape, g, |_, _, gv| -gv);
            }
            Op::Mul(a, b) => {
                self.binary_grad(a, b, &out_shape, g, true, |_, y, gv| gv * y);
                self.binary_grad(a, b, &out_shape, g, false, |x, _, gv| gv * x);
            }
            Op::Div(a, b) => {
                self.binary_grad(a, b, &out_shape, g, true, |_, y, gv| gv / y);
                self.binary_grad(a, b, &out_shape, g, false, |x, y, gv| -gv * x / (y * y));
            }
            Op::Neg(a) => self.add_grad(a, |buf| axpy(buf, g, -1.0)),
            Op::Scale(a, k) => self.add_grad(a, |buf| axpy(buf, g, k)),
            Op::Offset(a) | Op::Reshape(a) => self.add_grad(a, |buf| axpy(buf, g, 1.0)),
            Op::Sigmoid(a) => self.local_grad(a, i, g, |_, y| y * (1.0 - y)),
            Op::Tanh(a) => self.local_grad(a, i, g, |_, y| 1.0 - y * y),
            Op::Relu(a) => self.local_grad(a, i, g, |x, _| if x > 0.0 { 1.0 } else { 0.0 }),
            Op::Log(a) => self.local_grad(a, i, g, |x, _| 1.0 / x),
            Op::Exp(a) => self.local_grad(a, i, g, |_, y| y),
            Op::Square(a) => self.local_grad(a, i, g, |x, _| 2.0 * x),
            Op::Sqrt(a) => self.local_grad(a, i, g, |_, y| 0.5 / y),
            Op::Clamp { input, lo, hi } => self.local_grad(input, i, g, move |x, _| {
                if (lo..=hi).contains(&x) {
                    1.0
                } else {
                    0.0
                }
            }),
            Op::Sum(a) => self.add_grad(a, |buf| buf.iter_mut().for_each(|v| *v += g[0])),
            Op::Mean(a) => self.add_grad(a, |buf| {
                let k = g[0] / buf.len() as f64;
                buf.iter_mut().for_each(|v| *v += k);
            }),
            Op::SumAxis { input, axis } => {
                let shape = self.nodes[input.0].value.shape().to_vec();
                let (outer, dim, inner) = split_axis(&shape, axis);
                self.add_grad(input, |buf| {
                    for o in 0..outer {
                        let src = &g[o * inner..(o + 1) * inner];
                        for d in 0..dim {
                            let base = (o * dim + d) * inner;
                            axpy(&mut buf[base..base + inner], src, 1.0);
                        }
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (m, k) = {
                    let s = self.nodes[a.0].value.shape();
                    (s[0], s[1])
                };
                let n = out_shape[1];
                // dA = G · Bᵀ
                self.add_grad_with(a, |nodes, buf| {
                    let bv = nodes[b.0].value.data();
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            buf[r * k + p] += dot(grow, brow);
                        }
                    }
                });
                // dB = Aᵀ · G
                self.add_grad_with(b, |nodes, buf| {
                    let av = nodes[a.0].value.data();
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let coef = av[r * k + p];
                            if coef != 0.0 {
                                axpy(&mut buf[p * n..(p + 1) * n], grow, coef);
                            }
                        }
                    }
                });
            }
            Op::Concat { ref parts, axis } => {
                let (outer, _, inner) = split_axis(&out_shape, axis);
                let total = out_shape[axis] * inner;
                let mut offset = 0;
                for p in parts {
                    let chunk = self.nodes[p.0].value.shape()[axis] * inner;
                    let off = offset;
                    self.add_grad(*p, |buf| {
                        for o in 0..outer {
                            let src = &g[o * total + off..o * total + off + chunk];
                            axpy(&mut buf[o * chunk..(o + 1) * chunk], src, 1.0);
                        }
                    });
                    offset += chunk;
                }
            }
            Op::Slice { input, axis, start } => {
                let shape = self.nodes[input.0].value.shape().to_vec();
                let (outer, dim, inner) = split_axis(&shape, axis);
                let width = out_shape[axis] * inner;
                self.add_grad(input, |buf| {
                    for o in 0..outer {
                        let base = o * dim * inner + start * inner;
                        axpy(&mut buf[base..base + width], &g[o * width..(o + 1) * width], 1.0);
                    }
                });
            }
        }
    }

    /// Elementwise op: `grad_in += g * f'(x, y)` where `y` is the output value.
    fn local_grad(&mut self, a: Var, out: usize, g: &[f64], d: impl Fn(f64, f64) -> f64) {
        self.add_grad_with(a, |nodes, buf| {
            let x = nodes[a.0].value.data();
            let y = nodes[out].value.data();
            for j in 0..buf.len() {
                buf[j] += g[j] * d(x[j], y[j]);
            }
        });
    }

    /// Accumulate a broadcast gradient back into `target`, summing over
    /// broadcast dimensions. `f(x, y, g)` gives the per-element contribution.
    fn reduce_into(
        &mut self,
        target: Var,
        out_shape: &[usize],
        g: &[f64],
        f: impl Fn(f64, f64, f64) -> f64,
    ) {
        self.add_grad_with(target, |nodes, buf| {
            let shape = nodes[target.0].value.shape();
            if shape == out_shape {
                for j in 0..buf.len() {
                    buf[j] += f(0.0, 0.0, g[j]);
                }
            } else {
                let st = bstrides(shape, out_shape);
                let zero = vec![0; out_shape.len()];
                for_each_broadcast(out_shape, &st, &zero, |o, it, _| buf[it] += f(0.0, 0.0, g[o]));
            }
        });
    }

    fn binary_grad(
        &mut self,
        a: Var,
        b: Var,
        out_shape: &[usize],
        g: &[f64],
        wrt_a: bool,
        f: impl Fn(f64, f64, f64) -> f64,
    ) {
        let target = if wrt_a { a } else { b };
        self.add_grad_with(target, |nodes, buf| {
            let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
            let (x, y) = (va.data(), vb.data());
            if va.shape() == vb.shape() {
                for j in 0..buf.len() {
                    buf[j] += f(x[j], y[j], g[j]);
                }
            } else {
                let (ta, tb) = (bstrides(va.shape(), out_shape), bstrides(vb.shape(), out_shape));
                for_each_broadcast(out_shape, &ta, &tb, |o, i, j| {
                    let k = if wrt_a { i } else { j };
                    buf[k] += f(x[i], y[j], g[o]);
                });
            }
        });
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(dst: &mut [f64], src: &[f64], k: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += k * s;
    }
}

fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for r in 0..m {
        let orow = &mut out[r * n..(r + 1) * n];
        for p in 0..k {
            let coef = a[r * k + p];
            if coef != 0.0 {
                axpy(orow, &b[p * n..(p + 1) * n], coef);
            }
        }
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for d in 0..rank {
        let da = dim_from_right(a, rank - 1 - d);
        let db = dim_from_right(b, rank - 1 - d);
        out[d] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::ShapeMismatch {
                    op,
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

fn dim_from_right(shape: &[usize], k: usize) -> usize {
    if k < shape.len() {
        shape[shape.len() - 1 - k]
    } else {
        1
    }
}

/// Strides of `shape` aligned to `out`, zero on broadcast dimensions.
fn bstrides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let pad = rank - shape.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for d in (0..shape.len()).rev() {
        strides[pad + d] = if shape[d] == 1 { 0 } else { acc };
        acc *= shape[d];
    }
    strides
}

fn for_each_broadcast(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let rank = out.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let inner = out[rank - 1];
    let (ia_step, ib_step) = (sa[rank - 1], sb[rank - 1]);
    let rows: usize = out[..rank - 1].iter().product();
    let mut idx = vec![0usize; rank - 1];
    let (mut ia, mut ib) = (0usize, 0usize);
    for row in 0..rows {
        let o = row * inner;
        for j in 0..inner {
            f(o + j, ia + j * ia_step, ib + j * ib_step);
        }
        let mut d = rank - 1;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let mut g = Graph::new();
        let z = g.param(Tensor::scalar(0.0));
        let s = g.sigmoid(z);
        assert_eq!(g.value(s).item(), 0.5);
        g.backward(s).unwrap();
        assert_eq!(g.grad(z).item(), 0.25);
    }

    #[test]
    fn identity_matmul_is_noop() {
        let mut g = Graph::new();
        let i3 = g.constant(Tensor::eye(3));
        let a_val = t(&[3, 3], &[1.0, -2.0, 3.5, 0.0, 4.0, 5.0, -6.0, 7.0, 8.25]);
        let a = g.constant(a_val.clone());
        let out = g.matmul(i3, a).unwrap();
        assert_eq!(g.value(out), &a_val);
    }

    #[test]
    fn square_derivative() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).item(), 6.0);
    }

    #[test]
    fn weighted_sum_gradient() {
        let mut g = Graph::new();
        let w = g.constant(Tensor::vector(vec![1.0, 2.0]));
        let x = g.param(Tensor::vector(vec![3.0, 4.0]));
        let p = g.mul(w, x).unwrap();
        let loss = g.sum(p);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).data(), &[1.0, 2.0]);
        assert_eq!(g.value(loss).item(), 11.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(s)) if s == vec![2]));
    }

    #[test]
    fn shape_mismatch_names_operands() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[4, 2]));
        match g.matmul(a, b) {
            Err(Error::ShapeMismatch { op, lhs, rhs }) => {
                assert_eq!(op, "matmul");
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![4, 2]);
            }
            other => panic!("unexpected {other:?}"),
        }
        let c = g.constant(Tensor::zeros(&[3, 2]));
        assert!(matches!(g.add(a, c), Err(Error::ShapeMismatch { op: "add", .. })));
    }

    #[test]
    fn row_broadcast_bias_gradient_sums_rows() {
        let mut g = Graph::new();
        let x = g.constant(t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = g.param(t(&[1, 2], &[0.5, -0.5]));
        let y = g.add(x, b).unwrap();
        assert_eq!(g.value(y).data(), &[1.5, 1.5, 3.5, 3.5, 5.5, 5.5]);
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(b).data(), &[3.0, 3.0]);
    }

    #[test]
    fn column_broadcast_mul() {
        let mut g = Graph::new();
        let x = g.param(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let m = g.param(t(&[2, 1], &[0.0, 2.0]));
        let y = g.mul(x, m).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 0.0, 8.0, 10.0, 12.0]);
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(m).data(), &[6.0, 15.0]);
        assert_eq!(g.grad(x).data(), &[0.0, 0.0, 0.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let mut g = Graph::new();
        let a = g.param(t(&[2, 1], &[1.0, 2.0]));
        let b = g.param(t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]));
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let s = g.slice(c, 1, 1, 3).unwrap();
        assert_eq!(g.value(s), g.value(b));
        let loss = g.sum(s);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(a).data(), &[0.0, 0.0]);
        assert_eq!(g.grad(b).data(), &[1.0; 4]);
    }

    #[test]
    fn unreachable_gradient_stays_zero() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(2.0));
        let unused = g.param(Tensor::vector(vec![1.0, 1.0]));
        let _dead = g.exp(unused);
        let y = g.square(x);
        g.backward(y).unwrap();
        assert_eq!(g.grad(unused).data(), &[0.0, 0.0]);
    }

    #[test]
    fn zero_grad_makes_backward_repeatable() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[0.3, -1.2]));
        let s = g.tanh(x);
        let e = g.exp(s);
        let loss = g.mean(e);
        g.backward(loss).unwrap();
        let first = g.grad(x);
        g.backward(loss).unwrap();
        assert_relative_eq!(g.grad(x).data()[0], 2.0 * first.data()[0]);
        g.zero_grad();
        assert_eq!(g.grad(x).data(), &[0.0, 0.0]);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x), first);
    }

    #[test]
    fn clamp_blocks_gradient_outside_range() {
        let mut g = Graph::new();
        let x = g.param(t(&[3], &[-20.0, 0.5, 20.0]));
        let c = g.clamp(x, -10.0, 10.0);
        assert_eq!(g.value(c).data(), &[-10.0, 0.5, 10.0]);
        let loss = g.sum(c);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn mean_axis_keeps_dimension() {
        let mut g = Graph::new();
        let x = g.param(t(&[2, 3], &[1.0, 2.0, 3.0, 5.0, 6.0, 7.0]));
        let m = g.mean_axis(x, 0).unwrap();
        assert_eq!(g.shape(m), &[1, 3]);
        assert_eq!(g.value(m).data(), &[3.0, 4.0, 5.0]);
        let r = g.mean_axis(x, 1).unwrap();
        assert_eq!(g.shape(r), &[2, 1]);
        assert_eq!(g.value(r).data(), &[2.0, 6.0]);
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
    }
}
