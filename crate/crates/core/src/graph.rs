//! Forward computation over a [`ParameterSet`], with an optional tape for
//! reverse-mode gradients.
//!
//! Model code is written once against [`Compute`]. [`Eval`] runs it on plain
//! vectors for inference; [`Graph`] records every operation so that
//! [`Graph::backward`] can return parameter gradients.

use alloc::vec;
use alloc::vec::Vec;

use crate::nn::PROB_FLOOR;
use crate::tensor::{Gradients, ParamId, ParameterSet};

/// The operation set shared by inference and training passes.
///
/// Scalars are vectors of length one.
pub trait Compute {
    type V: Clone;

    fn params(&self) -> &ParameterSet;
    fn value<'a>(&'a self, v: &'a Self::V) -> &'a [f64];

    fn constant(&mut self, values: Vec<f64>) -> Self::V;
    /// A whole parameter tensor used as a flat vector.
    fn param(&mut self, id: ParamId) -> Self::V;
    /// One row of a matrix parameter.
    fn embed(&mut self, table: ParamId, row: usize) -> Self::V;
    /// `W x` for a matrix parameter `W`.
    fn matvec(&mut self, w: ParamId, x: &Self::V) -> Self::V;
    /// `Wᵀ x` for a matrix parameter `W`.
    fn matvec_t(&mut self, w: ParamId, x: &Self::V) -> Self::V;
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn sub(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn sigmoid(&mut self, a: &Self::V) -> Self::V;
    fn tanh(&mut self, a: &Self::V) -> Self::V;
    fn concat(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn dot(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    /// Concatenation of any number of vectors.
    fn stack(&mut self, parts: &[Self::V]) -> Self::V;
    fn softmax(&mut self, a: &Self::V) -> Self::V;
    /// `Σ_j weights[j] · items[j]`.
    fn weighted_sum(&mut self, weights: &Self::V, items: &[Self::V]) -> Self::V;
    /// `−ln max(softmax(logits)[target], PROB_FLOOR)`.
    fn neg_log_softmax(&mut self, logits: &Self::V, target: usize) -> Self::V;
    fn scale(&mut self, a: &Self::V, factor: f64) -> Self::V;
    /// `factor · a + offset`, elementwise.
    fn affine(&mut self, a: &Self::V, factor: f64, offset: f64) -> Self::V;
    /// Elementwise sum of equal-length vectors.
    fn sum(&mut self, parts: &[Self::V]) -> Self::V;
    fn clamp(&mut self, a: &Self::V, lo: f64, hi: f64) -> Self::V;
    /// `ln max(a, PROB_FLOOR)`.
    fn ln(&mut self, a: &Self::V) -> Self::V;
}

pub(crate) mod kernel {
    use super::*;

    pub fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), cols);
        (0..rows)
            .map(|i| {
                let row = &w[i * cols..(i + 1) * cols];
                row.iter().zip(x).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    pub fn matvec_t(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), rows);
        let mut out = vec![0.0; cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &w[i * cols..(i + 1) * cols];
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * xi;
            }
        }
        out
    }

    pub fn sigmoid(x: f64) -> f64 {
        if x >= 0.0 {
            1.0 / (1.0 + libm::exp(-x))
        } else {
            let e = libm::exp(x);
            e / (1.0 + e)
        }
    }

    pub fn softmax(x: &[f64]) -> Vec<f64> {
        let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut out: Vec<f64> = x.iter().map(|v| libm::exp(v - max)).collect();
        let total: f64 = out.iter().sum();
        out.iter_mut().for_each(|v| *v /= total);
        out
    }

    pub fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    pub fn weighted_sum<'a>(weights: &[f64], items: impl Iterator<Item = &'a [f64]>) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for (w, item) in weights.iter().zip(items) {
            if out.is_empty() {
                out = vec![0.0; item.len()];
            }
            for (o, v) in out.iter_mut().zip(item) {
                *o += w * v;
            }
        }
        out
    }

    pub fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        debug_assert_eq!(a.len(), b.len());
        a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
    }
}

/// Tape-free evaluation on owned vectors.
pub struct Eval<'p> {
    params: &'p ParameterSet,
}

impl<'p> Eval<'p> {
    pub fn new(params: &'p ParameterSet) -> Self {
        Self { params }
    }
}

impl Compute for Eval<'_> {
    type V = Vec<f64>;

    fn params(&self) -> &ParameterSet {
        self.params
    }

    fn value<'a>(&'a self, v: &'a Vec<f64>) -> &'a [f64] {
        v
    }

    fn constant(&mut self, values: Vec<f64>) -> Vec<f64> {
        values
    }

    fn param(&mut self, id: ParamId) -> Vec<f64> {
        self.params.get(id).values().to_vec()
    }

    fn embed(&mut self, table: ParamId, row: usize) -> Vec<f64> {
        self.params.get(table).row(row).to_vec()
    }

    fn matvec(&mut self, w: ParamId, x: &Vec<f64>) -> Vec<f64> {
        let t = self.params.get(w);
        kernel::matvec(t.values(), t.rows(), t.cols(), x)
    }

    fn matvec_t(&mut self, w: ParamId, x: &Vec<f64>) -> Vec<f64> {
        let t = self.params.get(w);
        kernel::matvec_t(t.values(), t.rows(), t.cols(), x)
    }

    fn add(&mut self, a: &Vec<f64>, b: &Vec<f64>) -> Vec<f64> {
        kernel::zip_map(a, b, |x, y| x + y)
    }

    fn sub(&mut self, a: &Vec<f64>, b: &Vec<f64>) -> Vec<f64> {
        kernel::zip_map(a, b, |x, y| x - y)
    }

    fn mul(&mut self, a: &Vec<f64>, b: &Vec<f64>) -> Vec<f64> {
        kernel::zip_map(a, b, |x, y| x * y)
    }

    fn sigmoid(&mut self, a: &Vec<f64>) -> Vec<f64> {
        a.iter().map(|&x| kernel::sigmoid(x)).collect()
    }

    fn tanh(&mut self, a: &Vec<f64>) -> Vec<f64> {
        a.iter().map(|&x| libm::tanh(x)).collect()
    }

    fn concat(&mut self, a: &Vec<f64>, b: &Vec<f64>) -> Vec<f64> {
        let mut out = Vec::with_capacity(a.len() + b.len());
        out.extend_from_slice(a);
        out.extend_from_slice(b);
        out
    }

    fn dot(&mut self, a: &Vec<f64>, b: &Vec<f64>) -> Vec<f64> {
        vec![kernel::dot(a, b)]
    }

    fn stack(&mut self, parts: &[Vec<f64>]) -> Vec<f64> {
        parts.concat()
    }

    fn softmax(&mut self, a: &Vec<f64>) -> Vec<f64> {
        kernel::softmax(a)
    }

    fn weighted_sum(&mut self, weights: &Vec<f64>, items: &[Vec<f64>]) -> Vec<f64> {
        kernel::weighted_sum(weights, items.iter().map(|v| v.as_slice()))
    }

    fn neg_log_softmax(&mut self, logits: &Vec<f64>, target: usize) -> Vec<f64> {
        let p = kernel::softmax(logits)[target];
        vec![-libm::log(p.max(PROB_FLOOR))]
    }

    fn scale(&mut self, a: &Vec<f64>, factor: f64) -> Vec<f64> {
        a.iter().map(|x| x * factor).collect()
    }

    fn affine(&mut self, a: &Vec<f64>, factor: f64, offset: f64) -> Vec<f64> {
        a.iter().map(|x| x * factor + offset).collect()
    }

    fn sum(&mut self, parts: &[Vec<f64>]) -> Vec<f64> {
        let mut out = parts[0].clone();
        for p in &parts[1..] {
            for (o, v) in out.iter_mut().zip(p) {
                *o += v;
            }
        }
        out
    }

    fn clamp(&mut self, a: &Vec<f64>, lo: f64, hi: f64) -> Vec<f64> {
        a.iter().map(|x| x.clamp(lo, hi)).collect()
    }

    fn ln(&mut self, a: &Vec<f64>) -> Vec<f64> {
        a.iter().map(|&x| libm::log(x.max(PROB_FLOOR))).collect()
    }
}

/// Node handle inside a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    Embed(ParamId, usize),
    MatVec(ParamId, Var),
    MatVecT(ParamId, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Concat(Var, Var),
    Dot(Var, Var),
    Stack(Vec<Var>),
    Softmax(Var),
    WeightedSum(Var, Vec<Var>),
    NegLogSoftmax { logits: Var, target: usize, probs: Vec<f64> },
    Scale(Var, f64),
    Sum(Vec<Var>),
    Clamp(Var, f64, f64),
    Ln(Var),
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

/// Recording evaluator. Every operation appends a node; [`Graph::backward`]
/// walks them in reverse.
pub struct Graph<'p> {
    params: &'p ParameterSet,
    nodes: Vec<Node>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParameterSet) -> Self {
        Self { params, nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    /// Scalar value of a length-one node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    /// Gradients of the scalar `loss` with respect to every parameter it
    /// touched.
    pub fn backward(&self, loss: Var) -> Gradients {
        self.backward_seeded(loss, 1.0)
    }

    /// As [`Graph::backward`], with the output gradient set to `seed`.
    pub fn backward_seeded(&self, loss: Var, seed: f64) -> Gradients {
        assert_eq!(self.nodes[loss.0].value.len(), 1, "backward needs a scalar output");
        let mut grads = Gradients::new(self.params.len());
        let mut node_grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        node_grads[loss.0] = Some(vec![seed]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = node_grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let mut send = |target: Var, delta: &[f64]| {
                let slot = node_grads[target.0]
                    .get_or_insert_with(|| vec![0.0; self.nodes[target.0].value.len()]);
                for (s, d) in slot.iter_mut().zip(delta) {
                    *s += d;
                }
            };
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    let slot = grads.slot(*id, g.len());
                    for (s, d) in slot.iter_mut().zip(&g) {
                        *s += d;
                    }
                }
                Op::Embed(id, row) => {
                    let t = self.params.get(*id);
                    let cols = t.cols();
                    let slot = grads.slot(*id, t.len());
                    for (s, d) in slot[row * cols..(row + 1) * cols].iter_mut().zip(&g) {
                        *s += d;
                    }
                }
                Op::MatVec(id, x) => {
                    let t = self.params.get(*id);
                    let (rows, cols) = (t.rows(), t.cols());
                    let xv = self.val(*x);
                    let slot = grads.slot(*id, t.len());
                    for (i, &gi) in g.iter().enumerate() {
                        if gi == 0.0 {
                            continue;
                        }
                        for (s, xj) in slot[i * cols..(i + 1) * cols].iter_mut().zip(xv) {
                            *s += gi * xj;
                        }
                    }
                    let dx = kernel::matvec_t(t.values(), rows, cols, &g);
                    send(*x, &dx);
                }
                Op::MatVecT(id, x) => {
                    let t = self.params.get(*id);
                    let (rows, cols) = (t.rows(), t.cols());
                    let xv = self.val(*x);
                    let slot = grads.slot(*id, t.len());
                    for (i, &xi) in xv.iter().enumerate() {
                        if xi == 0.0 {
                            continue;
                        }
                        for (s, gj) in slot[i * cols..(i + 1) * cols].iter_mut().zip(&g) {
                            *s += xi * gj;
                        }
                    }
                    let dx = kernel::matvec(t.values(), rows, cols, &g);
                    send(*x, &dx);
                }
                Op::Add(a, b) => {
                    send(*a, &g);
                    send(*b, &g);
                }
                Op::Sub(a, b) => {
                    send(*a, &g);
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    send(*b, &neg);
                }
                Op::Mul(a, b) => {
                    let da = kernel::zip_map(&g, self.val(*b), |x, y| x * y);
                    let db = kernel::zip_map(&g, self.val(*a), |x, y| x * y);
                    send(*a, &da);
                    send(*b, &db);
                }
                Op::Sigmoid(a) => {
                    let d = kernel::zip_map(&g, &node.value, |gi, y| gi * y * (1.0 - y));
                    send(*a, &d);
                }
                Op::Tanh(a) => {
                    let d = kernel::zip_map(&g, &node.value, |gi, y| gi * (1.0 - y * y));
                    send(*a, &d);
                }
                Op::Concat(a, b) => {
                    let n = self.nodes[a.0].value.len();
                    send(*a, &g[..n]);
                    send(*b, &g[n..]);
                }
                Op::Dot(a, b) => {
                    let da: Vec<f64> = self.val(*b).iter().map(|y| g[0] * y).collect();
                    let db: Vec<f64> = self.val(*a).iter().map(|x| g[0] * x).collect();
                    send(*a, &da);
                    send(*b, &db);
                }
                Op::Stack(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.len();
                        send(*p, &g[offset..offset + n]);
                        offset += n;
                    }
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let gy = kernel::dot(&g, y);
                    let d = kernel::zip_map(&g, y, |gi, yi| yi * (gi - gy));
                    send(*a, &d);
                }
                Op::WeightedSum(w, items) => {
                    let wv = self.val(*w);
                    let dw: Vec<f64> = items.iter().map(|it| kernel::dot(&g, self.val(*it))).collect();
                    for (wi, it) in wv.iter().zip(items) {
                        let d: Vec<f64> = g.iter().map(|x| x * wi).collect();
                        send(*it, &d);
                    }
                    send(*w, &dw);
                }
                Op::NegLogSoftmax { logits, target, probs } => {
                    if probs[*target] > PROB_FLOOR {
                        let mut d: Vec<f64> = probs.iter().map(|p| g[0] * p).collect();
                        d[*target] -= g[0];
                        send(*logits, &d);
                    }
                }
                Op::Scale(a, f) => {
                    let d: Vec<f64> = g.iter().map(|x| x * f).collect();
                    send(*a, &d);
                }
                Op::Sum(parts) => {
                    for p in parts {
                        send(*p, &g);
                    }
                }
                Op::Clamp(a, lo, hi) => {
                    let d = kernel::zip_map(&g, self.val(*a), |gi, x| {
                        if x > *lo && x < *hi {
                            gi
                        } else {
                            0.0
                        }
                    });
                    send(*a, &d);
                }
                Op::Ln(a) => {
                    let d = kernel::zip_map(&g, self.val(*a), |gi, x| {
                        if x > PROB_FLOOR {
                            gi / x
                        } else {
                            0.0
                        }
                    });
                    send(*a, &d);
                }
            }
        }
        grads
    }
}

impl Compute for Graph<'_> {
    type V = Var;

    fn params(&self) -> &ParameterSet {
        self.params
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a [f64] {
        &self.nodes[v.0].value
    }

    fn constant(&mut self, values: Vec<f64>) -> Var {
        self.push(values, Op::Constant)
    }

    fn param(&mut self, id: ParamId) -> Var {
        let v = self.params.get(id).values().to_vec();
        self.push(v, Op::Param(id))
    }

    fn embed(&mut self, table: ParamId, row: usize) -> Var {
        let v = self.params.get(table).row(row).to_vec();
        self.push(v, Op::Embed(table, row))
    }

    fn matvec(&mut self, w: ParamId, x: &Var) -> Var {
        let t = self.params.get(w);
        let v = kernel::matvec(t.values(), t.rows(), t.cols(), self.val(*x));
        self.push(v, Op::MatVec(w, *x))
    }

    fn matvec_t(&mut self, w: ParamId, x: &Var) -> Var {
        let t = self.params.get(w);
        let v = kernel::matvec_t(t.values(), t.rows(), t.cols(), self.val(*x));
        self.push(v, Op::MatVecT(w, *x))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Var {
        let v = kernel::zip_map(self.val(*a), self.val(*b), |x, y| x + y);
        self.push(v, Op::Add(*a, *b))
    }

    fn sub(&mut self, a: &Var, b: &Var) -> Var {
        let v = kernel::zip_map(self.val(*a), self.val(*b), |x, y| x - y);
        self.push(v, Op::Sub(*a, *b))
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Var {
        let v = kernel::zip_map(self.val(*a), self.val(*b), |x, y| x * y);
        self.push(v, Op::Mul(*a, *b))
    }

    fn sigmoid(&mut self, a: &Var) -> Var {
        let v = self.val(*a).iter().map(|&x| kernel::sigmoid(x)).collect();
        self.push(v, Op::Sigmoid(*a))
    }

    fn tanh(&mut self, a: &Var) -> Var {
        let v = self.val(*a).iter().map(|&x| libm::tanh(x)).collect();
        self.push(v, Op::Tanh(*a))
    }

    fn concat(&mut self, a: &Var, b: &Var) -> Var {
        let v = [self.val(*a), self.val(*b)].concat();
        self.push(v, Op::Concat(*a, *b))
    }

    fn dot(&mut self, a: &Var, b: &Var) -> Var {
        let v = vec![kernel::dot(self.val(*a), self.val(*b))];
        self.push(v, Op::Dot(*a, *b))
    }

    fn stack(&mut self, parts: &[Var]) -> Var {
        let v: Vec<f64> = parts.iter().flat_map(|p| self.val(*p).iter().copied()).collect();
        self.push(v, Op::Stack(parts.to_vec()))
    }

    fn softmax(&mut self, a: &Var) -> Var {
        let v = kernel::softmax(self.val(*a));
        self.push(v, Op::Softmax(*a))
    }

    fn weighted_sum(&mut self, weights: &Var, items: &[Var]) -> Var {
        let v = kernel::weighted_sum(self.val(*weights), items.iter().map(|it| self.val(*it)));
        self.push(v, Op::WeightedSum(*weights, items.to_vec()))
    }

    fn neg_log_softmax(&mut self, logits: &Var, target: usize) -> Var {
        let probs = kernel::softmax(self.val(*logits));
        let v = vec![-libm::log(probs[target].max(PROB_FLOOR))];
        self.push(v, Op::NegLogSoftmax { logits: *logits, target, probs })
    }

    fn scale(&mut self, a: &Var, factor: f64) -> Var {
        let v = self.val(*a).iter().map(|x| x * factor).collect();
        self.push(v, Op::Scale(*a, factor))
    }

    fn affine(&mut self, a: &Var, factor: f64, offset: f64) -> Var {
        let scaled = self.scale(a, factor);
        let n = self.val(*a).len();
        let shift = self.constant(vec![offset; n]);
        self.add(&scaled, &shift)
    }

    fn sum(&mut self, parts: &[Var]) -> Var {
        let mut v = self.val(parts[0]).to_vec();
        for p in &parts[1..] {
            for (o, x) in v.iter_mut().zip(self.val(*p)) {
                *o += x;
            }
        }
        self.push(v, Op::Sum(parts.to_vec()))
    }

    fn clamp(&mut self, a: &Var, lo: f64, hi: f64) -> Var {
        let v = self.val(*a).iter().map(|x| x.clamp(lo, hi)).collect();
        self.push(v, Op::Clamp(*a, lo, hi))
    }

    fn ln(&mut self, a: &Var) -> Var {
        let v = self.val(*a).iter().map(|&x| libm::log(x.max(PROB_FLOOR))).collect();
        self.push(v, Op::Ln(*a))
    }
}
