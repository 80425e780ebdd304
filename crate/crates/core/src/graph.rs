//! A small reverse-mode autodiff tape over 2-D matrices.
//!
//! A [`Graph`] records every operation applied to its nodes; [`Graph::backward`]
//! walks the tape in reverse and returns gradients for the parameters of the
//! [`ParamStore`] the graph was built against. Graphs are cheap and meant to be
//! built once per sample.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{gemm, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParamId(pub usize);

/// Named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Matrix)> {
        self.names.iter().zip(&self.values).enumerate().map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.values.iter_mut()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Matrix::is_finite)
    }
}

/// One gradient matrix per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub grads: Vec<Matrix>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self { grads: store.values.iter().map(|m| Matrix::zeros(m.rows, m.cols)).collect() }
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.grads[id.0]
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.grads {
            g.scale_in_place(s);
        }
    }

    pub fn l2_norm(&self) -> f64 {
        libm::sqrt(self.grads.iter().map(Matrix::sum_squares).sum())
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().all(Matrix::is_finite)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    MatMulNt(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    AddRowBroadcast(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Gelu(NodeId),
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, xhat: Matrix, rstd: Vec<f64> },
    MaskedSoftmax { x: NodeId, scale: f64 },
    GatherRows(NodeId, Vec<usize>),
    GatherCols(NodeId, Vec<usize>),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SliceRows(NodeId, usize),
    SliceCols(NodeId, usize),
    MeanRows(NodeId),
    WeightedSqErr { pred: NodeId, target: Matrix, weights: Matrix },
    Contrastive { a: NodeId, b: NodeId, mismatched: bool, margin: f64 },
    SumScalars(Vec<NodeId>),
}

struct Node {
    op: Op,
    value: Matrix,
    needs_grad: bool,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::tanh(GELU_C * (x + 0.044715 * x * x * x)))
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = libm::tanh(u);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Row softmax of `scale * x`, skipping columns where `mask` is false. Rows
/// with no attendable column come out as zeros.
pub fn masked_softmax(x: &Matrix, scale: f64, mask: &[bool]) -> Matrix {
    assert_eq!(mask.len(), x.cols, "softmax mask width");
    let mut out = Matrix::zeros(x.rows, x.cols);
    for r in 0..x.rows {
        let src = x.row(r);
        let mut max = f64::NEG_INFINITY;
        for (c, &v) in src.iter().enumerate() {
            if mask[c] {
                max = max.max(scale * v);
            }
        }
        if max == f64::NEG_INFINITY {
            continue;
        }
        let dst = out.row_mut(r);
        let mut sum = 0.0;
        for c in 0..src.len() {
            if mask[c] {
                let e = libm::exp(scale * src[c] - max);
                dst[c] = e;
                sum += e;
            }
        }
        for v in dst.iter_mut() {
            *v /= sum;
        }
    }
    out
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params, nodes: Vec::with_capacity(256) }
    }

    fn push(&mut self, op: Op, value: Matrix, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { op, value, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        match self.nodes[id.0].op {
            Op::Param(p) => self.params.get(p),
            _ => &self.nodes[id.0].value,
        }
    }

    pub fn into_value(mut self, id: NodeId) -> Matrix {
        match self.nodes[id.0].op {
            Op::Param(p) => self.params.get(p).clone(),
            _ => core::mem::take(&mut self.nodes[id.0].value),
        }
    }

    fn ng(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        self.push(Op::Param(id), Matrix::default(), true)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::MatMul(a, b), v, ng)
    }

    /// `a * b^T`
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        let mut v = Matrix::zeros(va.rows, vb.rows);
        gemm(1.0, va, false, vb, true, 0.0, &mut v);
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::MatMulNt(a, b), v, ng)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::Add(a, b), v, ng)
    }

    /// Adds the `1 x cols` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!((vb.rows, vb.cols), (1, va.cols), "add_row expects a 1 x cols bias");
        let mut v = va.clone();
        for r in 0..v.rows {
            for (x, y) in v.row_mut(r).iter_mut().zip(&vb.data) {
                *x += y;
            }
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::AddRow(a, b), v, ng)
    }

    /// Adds row `b` (shape `1 x cols`) to every row of `a`, where `a` is a
    /// constant-shaped activation; identical math to [`Graph::add_row`] but
    /// kept separate so the backward pass can route a broadcast embedding.
    pub fn add_broadcast(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!((vb.rows, vb.cols), (1, va.cols), "add_broadcast expects a 1 x cols row");
        let mut v = va.clone();
        for r in 0..v.rows {
            for (x, y) in v.row_mut(r).iter_mut().zip(&vb.data) {
                *x += y;
            }
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::AddRowBroadcast(a, b), v, ng)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::Mul(a, b), v, ng)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(Op::Scale(a, s), v, ng)
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(gelu);
        let ng = self.ng(a);
        self.push(Op::Gelu(a), v, ng)
    }

    /// Per-row layer normalization with `1 x cols` gain and bias.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let vx = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let cols = vx.cols;
        let mut xhat = Matrix::zeros(vx.rows, cols);
        let mut out = Matrix::zeros(vx.rows, cols);
        let mut rstd = Vec::with_capacity(vx.rows);
        for r in 0..vx.rows {
            let row = vx.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let rs = 1.0 / libm::sqrt(var + LN_EPS);
            rstd.push(rs);
            let xh = xhat.row_mut(r);
            for c in 0..cols {
                xh[c] = (row[c] - mean) * rs;
            }
            let o = out.row_mut(r);
            for c in 0..cols {
                o[c] = g.data[c] * xhat.get(r, c) + b.data[c];
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push(Op::LayerNorm { x, gamma, beta, xhat, rstd }, out, ng)
    }

    pub fn masked_softmax(&mut self, x: NodeId, scale: f64, mask: &[bool]) -> NodeId {
        let v = masked_softmax(self.value(x), scale, mask);
        let ng = self.ng(x);
        self.push(Op::MaskedSoftmax { x, scale }, v, ng)
    }

    pub fn gather_rows(&mut self, table: NodeId, idx: Vec<usize>) -> NodeId {
        let t = self.value(table);
        let mut v = Matrix::zeros(idx.len(), t.cols);
        for (r, &i) in idx.iter().enumerate() {
            v.row_mut(r).copy_from_slice(t.row(i));
        }
        let ng = self.ng(table);
        self.push(Op::GatherRows(table, idx), v, ng)
    }

    pub fn gather_cols(&mut self, a: NodeId, idx: Vec<usize>) -> NodeId {
        let v = self.value(a).gather_cols(&idx);
        let ng = self.ng(a);
        self.push(Op::GatherCols(a, idx), v, ng)
    }

    pub fn concat_rows(&mut self, parts: Vec<NodeId>) -> NodeId {
        let v = {
            let ms: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
            Matrix::concat_rows(&ms)
        };
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Op::ConcatRows(parts), v, ng)
    }

    pub fn concat_cols(&mut self, parts: Vec<NodeId>) -> NodeId {
        let v = {
            let ms: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
            Matrix::concat_cols(&ms)
        };
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Op::ConcatCols(parts), v, ng)
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.value(a).slice_rows(start, len);
        let ng = self.ng(a);
        self.push(Op::SliceRows(a, start), v, ng)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.value(a).slice_cols(start, len);
        let ng = self.ng(a);
        self.push(Op::SliceCols(a, start), v, ng)
    }

    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mean_rows();
        let ng = self.ng(a);
        self.push(Op::MeanRows(a), v, ng)
    }

    /// `sum(weights * (pred - target)^2)` as a `1 x 1` node.
    pub fn weighted_sq_err(&mut self, pred: NodeId, target: Matrix, weights: Matrix) -> NodeId {
        let p = self.value(pred);
        assert_eq!(p.shape(), target.shape(), "loss target shape");
        assert_eq!(p.shape(), weights.shape(), "loss weight shape");
        let mut s = 0.0;
        for i in 0..p.data.len() {
            let w = weights.data[i];
            if w != 0.0 {
                let d = p.data[i] - target.data[i];
                s += w * d * d;
            }
        }
        let ng = self.ng(pred);
        self.push(Op::WeightedSqErr { pred, target, weights }, Matrix::from_vec(1, 1, vec![s]), ng)
    }

    /// Margin contrastive loss between two `1 x e` embeddings.
    pub fn contrastive(&mut self, a: NodeId, b: NodeId, mismatched: bool, margin: f64) -> NodeId {
        let d = euclidean(self.value(a), self.value(b));
        let loss = contrastive_value(d, mismatched, margin);
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::Contrastive { a, b, mismatched, margin }, Matrix::from_vec(1, 1, vec![loss]), ng)
    }

    pub fn sum_scalars(&mut self, parts: Vec<NodeId>) -> NodeId {
        let s = parts.iter().map(|&p| self.value(p).data[0]).sum();
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Op::SumScalars(parts), Matrix::from_vec(1, 1, vec![s]), ng)
    }

    /// Gradients of the scalar node `loss` with respect to every parameter.
    pub fn backward(&self, loss: NodeId) -> Gradients {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar");
        let mut out = Gradients::zeros_like(self.params);
        let mut grads: Vec<Option<Matrix>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::from_vec(1, 1, vec![1.0]));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads, &mut out);
        }
        out
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], id: NodeId, g: Matrix) {
        if !self.ng(id) {
            return;
        }
        match &mut grads[id.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>], out: &mut Gradients) {
        match &node.op {
            Op::Leaf => {}
            Op::Param(p) => out.grads[p.0].add_assign(g),
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    let mut ga = Matrix::zeros(va.rows, va.cols);
                    gemm(1.0, g, false, vb, true, 0.0, &mut ga);
                    self.accumulate(grads, *a, ga);
                }
                if self.ng(*b) {
                    let mut gb = Matrix::zeros(vb.rows, vb.cols);
                    gemm(1.0, va, true, g, false, 0.0, &mut gb);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::MatMulNt(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    let mut ga = Matrix::zeros(va.rows, va.cols);
                    gemm(1.0, g, false, vb, false, 0.0, &mut ga);
                    self.accumulate(grads, *a, ga);
                }
                if self.ng(*b) {
                    let mut gb = Matrix::zeros(vb.rows, vb.cols);
                    gemm(1.0, g, true, va, false, 0.0, &mut gb);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, b) | Op::AddRowBroadcast(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.ng(*b) {
                    let mut gb = Matrix::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (x, y) in gb.data.iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    self.accumulate(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.ng(*b) {
                    self.accumulate(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.accumulate(grads, *a, g.map(|x| x * s));
            }
            Op::Gelu(a) => {
                let ga = g.zip_map(self.value(*a), |gy, x| gy * gelu_grad(x));
                self.accumulate(grads, *a, ga);
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let gam = self.value(*gamma);
                let cols = g.cols;
                if self.ng(*gamma) {
                    let mut gg = Matrix::zeros(1, cols);
                    for r in 0..g.rows {
                        for c in 0..cols {
                            gg.data[c] += g.get(r, c) * xhat.get(r, c);
                        }
                    }
                    self.accumulate(grads, *gamma, gg);
                }
                if self.ng(*beta) {
                    let mut gb = Matrix::zeros(1, cols);
                    for r in 0..g.rows {
                        for (x, y) in gb.data.iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                    self.accumulate(grads, *beta, gb);
                }
                if self.ng(*x) {
                    let mut gx = Matrix::zeros(g.rows, cols);
                    let n = cols as f64;
                    for r in 0..g.rows {
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for c in 0..cols {
                            let d = g.get(r, c) * gam.data[c];
                            mean_d += d;
                            mean_dx += d * xhat.get(r, c);
                        }
                        mean_d /= n;
                        mean_dx /= n;
                        let out_row = gx.row_mut(r);
                        for c in 0..cols {
                            let d = g.get(r, c) * gam.data[c];
                            out_row[c] = rstd[r] * (d - mean_d - xhat.get(r, c) * mean_dx);
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
            }
            Op::MaskedSoftmax { x, scale } => {
                let y = &node.value;
                let mut gx = Matrix::zeros(y.rows, y.cols);
                for r in 0..y.rows {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    let dst = gx.row_mut(r);
                    for c in 0..yr.len() {
                        dst[c] = scale * yr[c] * (gr[c] - dot);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::GatherRows(table, idx) => {
                let t = self.value(*table);
                let mut gt = Matrix::zeros(t.rows, t.cols);
                for (r, &i) in idx.iter().enumerate() {
                    for (x, y) in gt.row_mut(i).iter_mut().zip(g.row(r)) {
                        *x += y;
                    }
                }
                self.accumulate(grads, *table, gt);
            }
            Op::GatherCols(a, idx) => {
                let va = self.value(*a);
                let mut ga = Matrix::zeros(va.rows, va.cols);
                for r in 0..g.rows {
                    let src = g.row(r);
                    let dst = ga.row_mut(r);
                    for (c, &i) in idx.iter().enumerate() {
                        dst[i] += src[c];
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let rows = self.value(p).rows;
                    if self.ng(p) {
                        self.accumulate(grads, p, g.slice_rows(off, rows));
                    }
                    off += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let cols = self.value(p).cols;
                    if self.ng(p) {
                        self.accumulate(grads, p, g.slice_cols(off, cols));
                    }
                    off += cols;
                }
            }
            Op::SliceRows(a, start) => {
                let va = self.value(*a);
                let mut ga = Matrix::zeros(va.rows, va.cols);
                let n = g.data.len();
                ga.data[start * va.cols..start * va.cols + n].copy_from_slice(&g.data);
                self.accumulate(grads, *a, ga);
            }
            Op::SliceCols(a, start) => {
                let va = self.value(*a);
                let mut ga = Matrix::zeros(va.rows, va.cols);
                for r in 0..g.rows {
                    ga.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                }
                self.accumulate(grads, *a, ga);
            }
            Op::MeanRows(a) => {
                let va = self.value(*a);
                let mut ga = Matrix::zeros(va.rows, va.cols);
                let s = 1.0 / va.rows as f64;
                for r in 0..va.rows {
                    for (x, y) in ga.row_mut(r).iter_mut().zip(&g.data) {
                        *x = y * s;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::WeightedSqErr { pred, target, weights } => {
                let p = self.value(*pred);
                let s = g.data[0];
                let mut gp = Matrix::zeros(p.rows, p.cols);
                for i in 0..p.data.len() {
                    let w = weights.data[i];
                    if w != 0.0 {
                        gp.data[i] = 2.0 * w * (p.data[i] - target.data[i]) * s;
                    }
                }
                self.accumulate(grads, *pred, gp);
            }
            Op::Contrastive { a, b, mismatched, margin } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let d = euclidean(va, vb);
                let s = g.data[0];
                // dL/d(a - b)
                let coef = if !mismatched {
                    2.0
                } else if d < *margin && d > 0.0 {
                    -2.0 * (margin - d) / d
                } else {
                    0.0
                };
                let diff = va.zip_map(vb, |x, y| (x - y) * coef * s);
                if self.ng(*b) {
                    self.accumulate(grads, *b, diff.map(|v| -v));
                }
                self.accumulate(grads, *a, diff);
            }
            Op::SumScalars(parts) => {
                for &p in parts {
                    self.accumulate(grads, p, g.clone());
                }
            }
        }
    }
}

pub fn euclidean(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.len(), b.len(), "embedding widths differ");
    libm::sqrt(a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// `(1 - y) D^2 + y max(0, margin - D)^2` with `y = mismatched`.
pub fn contrastive_value(distance: f64, mismatched: bool, margin: f64) -> f64 {
    if mismatched {
        let h = (margin - distance).max(0.0);
        h * h
    } else {
        distance * distance
    }
}
