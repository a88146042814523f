//! Dynamic computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so a reverse sweep over the node
//! list is already a valid topological order for backpropagation. A graph is
//! consumed by a single call to [`Graph::backward`].

use std::collections::HashMap;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    MulConst(Var, Vec<f64>),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Sum(Var),
    Dot(Var, Var),
    MaskedSoftmax(Var, Vec<bool>),
    Concat(Vec<Var>),
    Stack(Vec<Var>),
    Slice(Var, usize),
    Rows(Var, usize),
    Index(Var, usize),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    grads: Option<Vec<Option<Vec<f64>>>>,
}

fn dim_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Dimension {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        debug_assert!(self.grads.is_none(), "graph extended after backward");
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.ng(v)
    }

    /// Gradient of the last backward's loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.as_ref()?.get(v.0)?.as_deref()
    }

    /// A constant leaf (no gradient).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A differentiable leaf that is not backed by a named parameter.
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store.value(name)?.clone();
        let v = self.push(value, Op::Leaf, true);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// Matrix product. A rank-1 left operand is a row vector, a rank-1 right
    /// operand a column vector; the corresponding output axis is dropped.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = match ta.shape() {
            [k] => (1, *k),
            [m, k] => (*m, *k),
            _ => return Err(dim_err("matmul", ta, tb)),
        };
        let (k2, n) = match tb.shape() {
            [k2] if ta.rank() == 2 => (*k2, 1),
            [k2, n] => (*k2, *n),
            _ => return Err(dim_err("matmul", ta, tb)),
        };
        if k != k2 {
            return Err(dim_err("matmul", ta, tb));
        }
        let out = matmul_raw(ta.data(), tb.data(), m, k, n);
        let shape = match (ta.rank(), tb.rank()) {
            (1, _) => vec![n],
            (_, 1) => vec![m],
            _ => vec![m, n],
        };
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul(a, b), ng))
    }

    fn zip(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dim_err(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "add", |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "sub", |x, y| x - y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Sub(a, b), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "mul", |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Mul(a, b), ng))
    }

    /// Adds a row vector to every row of a matrix.
    pub fn add_row(&mut self, mat: Var, row: Var) -> Result<Var> {
        let (tm, tr) = (self.value(mat), self.value(row));
        let cols = match tm.shape() {
            [_, c] if tr.shape() == [*c] => *c,
            _ => return Err(dim_err("add_row", tm, tr)),
        };
        let r = tr.data();
        let data = tm
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + r[i % cols])
            .collect();
        let t = Tensor::new(tm.shape().to_vec(), data)?;
        let ng = self.ng(mat) || self.ng(row);
        Ok(self.push(t, Op::AddRow(mat, row), ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let ta = self.value(a);
        let t = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| x * c).collect())
            .expect("same shape");
        let ng = self.ng(a);
        self.push(t, Op::Scale(a, c), ng)
    }

    /// Multiplies every element of `a` by the scalar node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        let (ta, ts) = (self.value(a), self.value(s));
        if ts.len() != 1 {
            return Err(dim_err("scale_by", ta, ts));
        }
        let c = ts.item();
        let t = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| x * c).collect())?;
        let ng = self.ng(a) || self.ng(s);
        Ok(self.push(t, Op::ScaleBy(a, s), ng))
    }

    /// Elementwise product with a constant buffer.
    pub fn mul_const(&mut self, a: Var, c: Vec<f64>) -> Result<Var> {
        let ta = self.value(a);
        if ta.len() != c.len() {
            return Err(Error::Dimension {
                op: "mul_const",
                lhs: ta.shape().to_vec(),
                rhs: vec![c.len()],
            });
        }
        let data = ta.data().iter().zip(&c).map(|(x, y)| x * y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::MulConst(a, c), ng))
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let ta = self.value(a);
        let t = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| f(*x)).collect())
            .expect("same shape");
        let ng = self.ng(a);
        self.push(t, op, ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a), f64::exp)
    }

    /// Natural log; the domain is the positive reals.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(x) = self.value(a).data().iter().find(|x| !(**x > 0.0)) {
            return Err(Error::Evaluation(format!("log of non-positive value {x}")));
        }
        Ok(self.map(a, Op::Log(a), f64::ln))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() != tb.len() || ta.rank() != 1 || tb.rank() != 1 {
            return Err(dim_err("dot", ta, tb));
        }
        let s = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).sum();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b), ng))
    }

    /// Softmax restricted to entries whose mask is `true`; masked entries are exactly zero.
    pub fn masked_softmax(&mut self, logits: Var, mask: &[bool]) -> Result<Var> {
        let t = self.value(logits);
        if t.rank() != 1 || t.len() != mask.len() {
            return Err(Error::Dimension {
                op: "masked_softmax",
                lhs: t.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let out = masked_softmax_raw(t.data(), mask)?;
        let ng = self.ng(logits);
        Ok(self.push(Tensor::vector(out), Op::MaskedSoftmax(logits, mask.to_vec()), ng))
    }

    /// Concatenates vectors end to end.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of nothing".into()));
        }
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.rank() != 1 {
                return Err(dim_err("concat", t, t));
            }
            data.extend_from_slice(t.data());
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Tensor::vector(data), Op::Concat(parts.to_vec()), ng))
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let Some(&first) = rows.first() else {
            return Err(Error::Contract("stack of nothing".into()));
        };
        let cols = self.value(first).len();
        let mut data = Vec::with_capacity(cols * rows.len());
        for &r in rows {
            let t = self.value(r);
            if t.rank() != 1 || t.len() != cols {
                return Err(dim_err("stack", self.value(first), t));
            }
            data.extend_from_slice(t.data());
        }
        let ng = rows.iter().any(|&r| self.ng(r));
        let t = Tensor::new(vec![rows.len(), cols], data)?;
        Ok(self.push(t, Op::Stack(rows.to_vec()), ng))
    }

    /// Contiguous sub-vector `[start, start + len)`.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 1 || len == 0 || start + len > t.len() {
            return Err(Error::Dimension {
                op: "slice",
                lhs: t.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let data = t.data()[start..start + len].to_vec();
        let ng = self.ng(a);
        Ok(self.push(Tensor::vector(data), Op::Slice(a, start), ng))
    }

    /// Rows `[start, start + count)` of a matrix.
    pub fn rows(&mut self, a: Var, start: usize, count: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = match t.shape() {
            [r, c] => (*r, *c),
            _ => return Err(dim_err("rows", t, t)),
        };
        if count == 0 || start + count > r {
            return Err(Error::Dimension {
                op: "rows",
                lhs: t.shape().to_vec(),
                rhs: vec![start, count],
            });
        }
        let data = t.data()[start * c..(start + count) * c].to_vec();
        let ng = self.ng(a);
        Ok(self.push(Tensor::new(vec![count, c], data)?, Op::Rows(a, start), ng))
    }

    /// Single row of a matrix as a vector.
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = match t.shape() {
            [r, c] => (*r, *c),
            _ => return Err(dim_err("row", t, t)),
        };
        if i >= r {
            return Err(Error::Dimension {
                op: "row",
                lhs: t.shape().to_vec(),
                rhs: vec![i],
            });
        }
        let data = t.data()[i * c..(i + 1) * c].to_vec();
        let ng = self.ng(a);
        Ok(self.push(Tensor::vector(data), Op::Slice(a, i * c), ng))
    }

    /// Element `i` (flat index) as a scalar node.
    pub fn index(&mut self, a: Var, i: usize) -> Result<Var> {
        let t = self.value(a);
        if i >= t.len() {
            return Err(Error::Dimension {
                op: "index",
                lhs: t.shape().to_vec(),
                rhs: vec![i],
            });
        }
        let v = t.data()[i];
        let ng = self.ng(a);
        Ok(self.push(Tensor::scalar(v), Op::Index(a, i), ng))
    }

    /// Reverse sweep from a scalar `loss`. Consumes the graph: a second call fails.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.grads.is_some() {
            return Err(Error::State("backward already ran on this graph".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].needs_grad {
                self.propagate(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        self.grads = Some(grads);
        Ok(())
    }

    /// Adds the gradients of every parameter leaf into `store`.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) -> Result<()> {
        let grads = self
            .grads
            .as_ref()
            .ok_or_else(|| Error::State("no backward has run on this graph".into()))?;
        let mut named: Vec<(&String, &Var)> = self.params.iter().collect();
        named.sort();
        for (name, v) in named {
            if let Some(g) = &grads[v.0] {
                store.accumulate_grad(name, g)?;
            }
        }
        Ok(())
    }

    /// Named parameter leaves created on this graph.
    pub fn param_vars(&self) -> impl Iterator<Item = (&str, Var)> {
        self.params.iter().map(|(k, v)| (k.as_str(), *v))
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let mut acc = |v: Var, delta: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            delta(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = match ta.shape() {
                    [k] => (1, *k),
                    [m, k] => (*m, *k),
                    _ => unreachable!(),
                };
                let n = if tb.rank() == 2 { tb.shape()[1] } else { 1 };
                // dA = dC * B^T
                acc(*a, &mut |s| {
                    for r in 0..m {
                        for c in 0..k {
                            let mut t = 0.0;
                            for j in 0..n {
                                t += g[r * n + j] * tb.data()[c * n + j];
                            }
                            s[r * k + c] += t;
                        }
                    }
                });
                // dB = A^T * dC
                acc(*b, &mut |s| {
                    for r in 0..m {
                        for c in 0..k {
                            let av = ta.data()[r * k + c];
                            if av == 0.0 {
                                continue;
                            }
                            let row = &g[r * n..(r + 1) * n];
                            for (j, gv) in row.iter().enumerate() {
                                s[c * n + j] += av * gv;
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |s| {
                    for j in 0..s.len() {
                        s[j] += g[j] * tb[j];
                    }
                });
                acc(*b, &mut |s| {
                    for j in 0..s.len() {
                        s[j] += g[j] * ta[j];
                    }
                });
            }
            Op::AddRow(mat, row) => {
                acc(*mat, &mut |s| add_into(s, g));
                acc(*row, &mut |s| {
                    let c = s.len();
                    for (j, gv) in g.iter().enumerate() {
                        s[j % c] += gv;
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += c * y)),
            Op::ScaleBy(a, sv) => {
                let c = self.value(*sv).item();
                let ta = self.value(*a).data();
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += c * y));
                acc(*sv, &mut |s| s[0] += ta.iter().zip(g).map(|(x, y)| x * y).sum::<f64>());
            }
            Op::MulConst(a, c) => {
                acc(*a, &mut |s| {
                    for j in 0..s.len() {
                        s[j] += g[j] * c[j];
                    }
                })
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                acc(*a, &mut |s| {
                    for j in 0..s.len() {
                        s[j] += g[j] * (1.0 - y[j] * y[j]);
                    }
                })
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                acc(*a, &mut |s| {
                    for j in 0..s.len() {
                        s[j] += g[j] * y[j] * (1.0 - y[j]);
                    }
                })
            }
            Op::Exp(a) => {
                let y = node.value.data();
                acc(*a, &mut |s| {
                    for j in 0..s.len() {
                        s[j] += g[j] * y[j];
                    }
                })
            }
            Op::Log(a) => {
                let x = self.value(*a).data();
                acc(*a, &mut |s| {
                    for j in 0..s.len() {
                        s[j] += g[j] / x[j];
                    }
                })
            }
            Op::Sum(a) => acc(*a, &mut |s| s.iter_mut().for_each(|x| *x += g[0])),
            Op::Dot(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |s| {
                    for j in 0..s.len() {
                        s[j] += g[0] * tb[j];
                    }
                });
                acc(*b, &mut |s| {
                    for j in 0..s.len() {
                        s[j] += g[0] * ta[j];
                    }
                });
            }
            Op::MaskedSoftmax(a, mask) => {
                let y = node.value.data();
                let inner: f64 = y.iter().zip(g).map(|(p, gv)| p * gv).sum();
                acc(*a, &mut |s| {
                    for j in 0..s.len() {
                        if mask[j] {
                            s[j] += y[j] * (g[j] - inner);
                        }
                    }
                })
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    acc(*p, &mut |s| add_into(s, &g[off..off + n]));
                    off += n;
                }
            }
            Op::Stack(rows) => {
                let c = self.value(rows[0]).len();
                for (r, v) in rows.iter().enumerate() {
                    acc(*v, &mut |s| add_into(s, &g[r * c..(r + 1) * c]));
                }
            }
            Op::Slice(a, start) => acc(*a, &mut |s| add_into(&mut s[*start..*start + g.len()], g)),
            Op::Rows(a, start) => {
                let c = self.value(*a).shape()[1];
                let off = start * c;
                acc(*a, &mut |s| add_into(&mut s[off..off + g.len()], g));
            }
            Op::Index(a, j) => acc(*a, &mut |s| s[*j] += g[0]),
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Plain-value masked softmax with max subtraction.
pub fn masked_softmax_raw(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|(x, _)| *x)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::EmptySupport("softmax mask has no true entries".into()));
    }
    let mut out: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(x, m)| if *m { (x - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= z);
    Ok(out)
}
