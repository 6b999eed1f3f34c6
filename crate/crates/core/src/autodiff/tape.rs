//! Define-by-run reverse-mode tape.
//!
//! Every forward operation appends a node holding its value and the handles of
//! its operands, so nodes are stored in topological order by construction.
//! [`Tape::backward`] walks the nodes in reverse, accumulating gradients
//! additively into each operand; a node feeding several consumers receives the
//! sum of their contributions.

use std::cell::RefCell;

use super::tensor::{Shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise operations exposed through [`Tape::elementwise`].
#[derive(Copy, Clone, Debug, PartialEq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Hadamard,
    Sigmoid,
    Tanh,
    Scale(f64),
}

/// Deliberately wrong backward rules, used to confirm that the gradient
/// checker notices a broken derivative.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum BackwardFault {
    /// Uses `1 - y` in place of `1 - y^2` for the tanh derivative.
    TanhDerivative,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Scale(Var, f64),
    Softmax(Var),
    Concat(Vec<Var>),
    Sum(Var),
    Dot(Var, Var),
    Element(Var, usize),
    Columns(Var, usize, usize),
    WeightedSum { weights: Var, rows: Vec<Var> },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    fault: Option<BackwardFault>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn with_fault(fault: BackwardFault) -> Self {
        Tape {
            nodes: RefCell::default(),
            fault: Some(fault),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op, value: Tensor) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, value });
        Var(nodes.len() - 1)
    }

    /// Records an input tensor (parameter or constant).
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes.borrow()[v.0].value.shape()
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes.borrow()[v.0].value.values()[0]
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            let (m, k) = match ta.shape() {
                Shape::Matrix(m, k) => (m, k),
                s => return Err(Error::shape("matmul", &s.dims(), &tb.shape().dims())),
            };
            let av = ta.values();
            let bv = tb.values();
            match tb.shape() {
                Shape::Vector(kb) if kb == k => {
                    let out = (0..m).map(|i| dot(&av[i * k..(i + 1) * k], bv)).collect();
                    Tensor::vector(out)
                }
                Shape::Matrix(kb, n) if kb == k => {
                    let mut out = vec![0.0; m * n];
                    for i in 0..m {
                        let row = &mut out[i * n..(i + 1) * n];
                        for l in 0..k {
                            let a_il = av[i * k + l];
                            for (o, b) in row.iter_mut().zip(&bv[l * n..(l + 1) * n]) {
                                *o += a_il * b;
                            }
                        }
                    }
                    Tensor::matrix(m, n, out)?
                }
                s => return Err(Error::shape("matmul", &ta.shape().dims(), &s.dims())),
            }
        };
        Ok(self.push(Op::MatMul(a, b), value))
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let nodes = self.nodes.borrow();
        let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(Error::shape(op, &ta.shape().dims(), &tb.shape().dims()));
        }
        let values = ta.values().iter().zip(tb.values()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), values)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let nodes = self.nodes.borrow();
        let t = &nodes[a.0].value;
        let values = t.values().iter().map(|&x| f(x)).collect();
        Tensor::new(t.shape(), values).expect("map preserves shape")
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn hadamard(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_same("hadamard", a, b, |x, y| x * y)?;
        Ok(self.push(Op::Hadamard(a, b), v))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let v = self.map(a, sigmoid);
        self.push(Op::Sigmoid(a), v)
    }

    pub fn tanh(&self, a: Var) -> Var {
        let v = self.map(a, f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn scale(&self, a: Var, factor: f64) -> Var {
        let v = self.map(a, |x| x * factor);
        self.push(Op::Scale(a, factor), v)
    }

    /// Dispatches a pointwise operation; binary ops take two operands, the
    /// rest take one.
    pub fn elementwise(&self, op: ElementwiseOp, args: &[Var]) -> Result<Var> {
        let arity = match op {
            ElementwiseOp::Add | ElementwiseOp::Sub | ElementwiseOp::Hadamard => 2,
            _ => 1,
        };
        if args.len() != arity {
            return Err(Error::Domain(format!(
                "{op:?} takes {arity} operand(s), got {}",
                args.len()
            )));
        }
        match op {
            ElementwiseOp::Add => self.add(args[0], args[1]),
            ElementwiseOp::Sub => self.sub(args[0], args[1]),
            ElementwiseOp::Hadamard => self.hadamard(args[0], args[1]),
            ElementwiseOp::Sigmoid => Ok(self.sigmoid(args[0])),
            ElementwiseOp::Tanh => Ok(self.tanh(args[0])),
            ElementwiseOp::Scale(f) => Ok(self.scale(args[0], f)),
        }
    }

    pub fn softmax(&self, a: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let t = &nodes[a.0].value;
            if !matches!(t.shape(), Shape::Vector(_)) {
                return Err(Error::shape("softmax", &t.shape().dims(), &[]));
            }
            Tensor::vector(softmax(t.values())?)
        };
        Ok(self.push(Op::Softmax(a), value))
    }

    pub fn concat(&self, a: Var, b: Var) -> Result<Var> {
        self.concat_all(&[a, b])
    }

    /// Concatenates rank-1 operands in order.
    pub fn concat_all(&self, parts: &[Var]) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let mut out = Vec::new();
            for p in parts {
                let t = &nodes[p.0].value;
                if !matches!(t.shape(), Shape::Vector(_)) {
                    return Err(Error::shape("concat", &t.shape().dims(), &[]));
                }
                out.extend_from_slice(t.values());
            }
            Tensor::vector(out)
        };
        Ok(self.push(Op::Concat(parts.to_vec()), value))
    }

    /// Sum of all elements, as a length-1 vector.
    pub fn sum(&self, a: Var) -> Var {
        let s = self.nodes.borrow()[a.0].value.values().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    pub fn dot(&self, a: Var, b: Var) -> Result<Var> {
        let s = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            match (ta.shape(), tb.shape()) {
                (Shape::Vector(n), Shape::Vector(m)) if n == m => {}
                (l, r) => return Err(Error::shape("dot", &l.dims(), &r.dims())),
            }
            ta.values().iter().zip(tb.values()).map(|(x, y)| x * y).sum()
        };
        Ok(self.push(Op::Dot(a, b), Tensor::scalar(s)))
    }

    /// Extracts element `index` of a rank-1 node.
    pub fn element(&self, a: Var, index: usize) -> Result<Var> {
        let x = {
            let nodes = self.nodes.borrow();
            let t = &nodes[a.0].value;
            match t.shape() {
                Shape::Vector(n) if index < n => t.values()[index],
                s => return Err(Error::shape("element", &s.dims(), &[index])),
            }
        };
        Ok(self.push(Op::Element(a, index), Tensor::scalar(x)))
    }

    /// Columns `start..end` of a matrix node.
    pub fn columns(&self, a: Var, start: usize, end: usize) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let t = &nodes[a.0].value;
            let (r, c) = match t.shape() {
                Shape::Matrix(r, c) if start <= end && end <= c => (r, c),
                s => return Err(Error::shape("columns", &s.dims(), &[start, end])),
            };
            let mut out = Vec::with_capacity(r * (end - start));
            for i in 0..r {
                out.extend_from_slice(&t.values()[i * c + start..i * c + end]);
            }
            Tensor::matrix(r, end - start, out)?
        };
        Ok(self.push(Op::Columns(a, start, end), value))
    }

    /// `sum_j weights[j] * rows[j]` over equal-length rank-1 rows.
    pub fn weighted_sum(&self, weights: Var, rows: &[Var]) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let w = &nodes[weights.0].value;
            if w.shape() != Shape::Vector(rows.len()) {
                return Err(Error::shape("weighted_sum", &w.shape().dims(), &[rows.len()]));
            }
            let width = match rows.first() {
                Some(r) => nodes[r.0].value.len(),
                None => return Err(Error::Domain("weighted_sum over zero rows".into())),
            };
            let mut out = vec![0.0; width];
            for (wj, r) in w.values().iter().zip(rows) {
                let t = &nodes[r.0].value;
                if t.shape() != Shape::Vector(width) {
                    return Err(Error::shape("weighted_sum", &[width], &t.shape().dims()));
                }
                for (o, x) in out.iter_mut().zip(t.values()) {
                    *o += wj * x;
                }
            }
            Tensor::vector(out)
        };
        Ok(self.push(
            Op::WeightedSum {
                weights,
                rows: rows.to_vec(),
            },
            value,
        ))
    }

    /// Reverse sweep from a single-element `loss` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let loss_shape = nodes[loss.0].value.shape();
        if loss_shape.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss_shape.dims()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            let out = node.value.values();
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ta = &nodes[a.0].value;
                    let tb = &nodes[b.0].value;
                    let (m, k) = (ta.rows(), ta.cols());
                    let av = ta.values();
                    let bv = tb.values();
                    let n = match tb.shape() {
                        Shape::Vector(_) => 1,
                        Shape::Matrix(_, n) => n,
                    };
                    if n == 1 {
                        // Matrix-vector: dA = g bᵀ, db = Aᵀ g.
                        let ga = slot(&mut grads, *a, m * k);
                        for (row, &gi) in ga.chunks_exact_mut(k).zip(&g) {
                            axpy(row, gi, bv);
                        }
                        let gb = slot(&mut grads, *b, k);
                        for (arow, &gi) in av.chunks_exact(k).zip(&g) {
                            axpy(gb, gi, arow);
                        }
                        grads[i] = Some(g);
                        continue;
                    }
                    {
                        let ga = slot(&mut grads, *a, m * k);
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for l in 0..k {
                                let brow = &bv[l * n..(l + 1) * n];
                                ga[i * k + l] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    }
                    let gb = slot(&mut grads, *b, k * n);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for l in 0..k {
                            let a_il = av[i * k + l];
                            for (d, x) in gb[l * n..(l + 1) * n].iter_mut().zip(grow) {
                                *d += a_il * x;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    axpy(slot(&mut grads, *a, g.len()), 1.0, &g);
                    axpy(slot(&mut grads, *b, g.len()), 1.0, &g);
                }
                Op::Sub(a, b) => {
                    axpy(slot(&mut grads, *a, g.len()), 1.0, &g);
                    axpy(slot(&mut grads, *b, g.len()), -1.0, &g);
                }
                Op::Hadamard(a, b) => {
                    let av = nodes[a.0].value.values();
                    let bv = nodes[b.0].value.values();
                    for (d, (x, y)) in slot(&mut grads, *a, g.len()).iter_mut().zip(g.iter().zip(bv)) {
                        *d += x * y;
                    }
                    for (d, (x, y)) in slot(&mut grads, *b, g.len()).iter_mut().zip(g.iter().zip(av)) {
                        *d += x * y;
                    }
                }
                Op::Sigmoid(a) => {
                    for (d, (x, y)) in slot(&mut grads, *a, g.len()).iter_mut().zip(g.iter().zip(out)) {
                        *d += x * y * (1.0 - y);
                    }
                }
                Op::Tanh(a) => {
                    let broken = self.fault == Some(BackwardFault::TanhDerivative);
                    for (d, (x, y)) in slot(&mut grads, *a, g.len()).iter_mut().zip(g.iter().zip(out)) {
                        let dy = if broken { 1.0 - y } else { 1.0 - y * y };
                        *d += x * dy;
                    }
                }
                Op::Scale(a, f) => axpy(slot(&mut grads, *a, g.len()), *f, &g),
                Op::Softmax(a) => {
                    let gy: f64 = g.iter().zip(out).map(|(x, y)| x * y).sum();
                    for (d, (x, y)) in slot(&mut grads, *a, g.len()).iter_mut().zip(g.iter().zip(out)) {
                        *d += y * (x - gy);
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = nodes[p.0].value.len();
                        axpy(slot(&mut grads, *p, len), 1.0, &g[offset..offset + len]);
                        offset += len;
                    }
                }
                Op::Sum(a) => {
                    let len = nodes[a.0].value.len();
                    for d in slot(&mut grads, *a, len) {
                        *d += g[0];
                    }
                }
                Op::Dot(a, b) => {
                    let av = nodes[a.0].value.values();
                    let bv = nodes[b.0].value.values();
                    axpy(slot(&mut grads, *a, av.len()), g[0], bv);
                    axpy(slot(&mut grads, *b, bv.len()), g[0], av);
                }
                Op::Element(a, index) => {
                    let len = nodes[a.0].value.len();
                    slot(&mut grads, *a, len)[*index] += g[0];
                }
                Op::Columns(a, start, end) => {
                    let t = &nodes[a.0].value;
                    let (r, c) = (t.rows(), t.cols());
                    let width = end - start;
                    let ga = slot(&mut grads, *a, r * c);
                    for i in 0..r {
                        axpy(&mut ga[i * c + start..i * c + end], 1.0, &g[i * width..(i + 1) * width]);
                    }
                }
                Op::WeightedSum { weights, rows } => {
                    let wv = nodes[weights.0].value.values();
                    for (j, r) in rows.iter().enumerate() {
                        let rv = nodes[r.0].value.values();
                        let dw: f64 = g.iter().zip(rv).map(|(x, y)| x * y).sum();
                        slot(&mut grads, *weights, wv.len())[j] += dw;
                        axpy(slot(&mut grads, *r, rv.len()), wv[j], &g);
                    }
                }
            }
            grads[i] = Some(g);
        }

        Ok(Gradients {
            shapes: nodes.iter().map(|n| n.value.shape()).collect(),
            grads,
        })
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

/// Dot product with four independent accumulators so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for j in 0..4 {
            acc[j] += x[j] * y[j];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn axpy(dst: &mut [f64], alpha: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
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

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Domain("softmax of an empty vector".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Result of [`Tape::backward`]. Nodes the loss does not depend on report
/// zero gradients.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Shape>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0];
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient matches node shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn is_reachable(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}
