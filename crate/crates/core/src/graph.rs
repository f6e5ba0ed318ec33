//! A small reverse-mode automatic differentiation tape over 2-d arrays.
//!
//! Every value is a matrix. Scalars are 1 x 1 matrices and row vectors are
//! 1 x n. Nodes are appended in evaluation order, so a reverse sweep over the
//! node list is a valid topological order for backpropagation.

use ndarray::{s, Array1, Array2, Axis, Zip};

use crate::alignment::loss;
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<F> {
    Leaf,
    MatMul(NodeId, NodeId),
    /// a · bᵀ
    MatMulNt(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    AddScaled(NodeId, NodeId, F),
    Scale(NodeId, F),
    MulConst(NodeId, Array2<F>),
    Gelu(NodeId),
    Tanh(NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Array2<F>,
        inv_std: Array1<F>,
    },
    Softmax(NodeId),
    SliceCols(NodeId, usize),
    SliceRows(NodeId, usize),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    MeanRows(NodeId),
    L2NormRows(NodeId, Array1<F>),
    Im2Col {
        x: NodeId,
        kernel: usize,
        stride: usize,
    },
    /// Loss nodes store their local gradient computed during the forward pass.
    Precomputed(NodeId, Array2<F>),
    Fixed,
}

#[derive(Debug)]
struct Node<F> {
    value: Array2<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients<F> {
    grads: Vec<Option<Array2<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, id: NodeId) -> Option<&Array2<F>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Array2<F>> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

#[derive(Debug, Default)]
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

// 0.5 (1 + tanh(u)) == sigmoid(2u), which needs a single exp.
fn gelu_sigmoid<F: Real>(x: F) -> F {
    let u = F::lit(GELU_C) * (x + F::lit(GELU_A) * x * x * x);
    F::one() / (F::one() + (-(u + u)).exp())
}

fn gelu<F: Real>(x: F) -> F {
    x * gelu_sigmoid(x)
}

fn gelu_grad<F: Real>(x: F) -> F {
    let sig = gelu_sigmoid(x);
    let du = F::lit(GELU_C) * (F::one() + F::lit(3.0 * GELU_A) * x * x);
    sig + (x + x) * sig * (F::one() - sig) * du
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<F>, op: Op<F>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn ng(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].needs_grad)
    }

    /// Constant input: no gradient is accumulated for it.
    pub fn constant(&mut self, value: Array2<F>) -> NodeId {
        self.push(value, Op::Fixed, false)
    }

    /// Differentiable input (parameter or probed input).
    pub fn variable(&mut self, value: Array2<F>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    pub fn input(&mut self, value: Array2<F>, requires_grad: bool) -> NodeId {
        if requires_grad {
            self.variable(value)
        } else {
            self.constant(value)
        }
    }

    pub fn value(&self, id: NodeId) -> &Array2<F> {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> F {
        self.nodes[id.0].value[[0, 0]]
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(self.value(b));
        let ng = self.ng(&[a, b]);
        self.push(v, Op::MatMul(a, b), ng)
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(&self.value(b).t());
        let ng = self.ng(&[a, b]);
        self.push(v, Op::MatMulNt(a, b), ng)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) + self.value(b);
        let ng = self.ng(&[a, b]);
        self.push(v, Op::Add(a, b), ng)
    }

    /// `a + alpha * b`
    pub fn add_scaled(&mut self, a: NodeId, b: NodeId, alpha: F) -> NodeId {
        let v = self.value(a) + &(self.value(b) * alpha);
        let ng = self.ng(&[a, b]);
        self.push(v, Op::AddScaled(a, b, alpha), ng)
    }

    /// Broadcasts a 1 x n row over every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let v = self.value(a) + self.value(row);
        let ng = self.ng(&[a, row]);
        self.push(v, Op::AddRow(a, row), ng)
    }

    pub fn scale(&mut self, a: NodeId, s: F) -> NodeId {
        let v = self.value(a) * s;
        let ng = self.ng(&[a]);
        self.push(v, Op::Scale(a, s), ng)
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mul_const(&mut self, a: NodeId, mask: Array2<F>) -> NodeId {
        let v = self.value(a) * &mask;
        let ng = self.ng(&[a]);
        self.push(v, Op::MulConst(a, mask), ng)
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(gelu);
        let ng = self.ng(&[a]);
        self.push(v, Op::Gelu(a), ng)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(F::tanh);
        let ng = self.ng(&[a]);
        self.push(v, Op::Tanh(a), ng)
    }

    /// Row-wise layer normalization with affine 1 x n `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let xv = self.value(x);
        let n = F::lit(xv.ncols() as f64);
        let mut xhat = xv.clone();
        let mut inv_std = Array1::zeros(xv.nrows());
        for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / n;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|&v| v * v).sum::<F>() / n;
            *is = F::one() / (var + F::lit(LN_EPS)).sqrt();
            let s = *is;
            row.mapv_inplace(|v| v * s);
        }
        let v = &xhat * self.value(gamma) + self.value(beta);
        let ng = self.ng(&[x, gamma, beta]);
        self.push(
            v,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    /// Row softmax. Columns at or beyond `valid_cols` get probability zero.
    pub fn softmax_rows(&mut self, a: NodeId, valid_cols: Option<usize>) -> NodeId {
        let mut v = self.value(a).as_standard_layout().into_owned();
        let cols = v.ncols();
        let valid = valid_cols.unwrap_or(cols).clamp(1, cols);
        let data = v.as_slice_mut().expect("standard layout");
        for row in data.chunks_exact_mut(cols.max(1)) {
            let (live, masked) = row.split_at_mut(valid);
            let max = live.iter().copied().fold(F::neg_infinity(), F::max);
            let mut sum = F::zero();
            for x in live.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            let inv = F::one() / sum;
            live.iter_mut().for_each(|x| *x *= inv);
            masked.iter_mut().for_each(|x| *x = F::zero());
        }
        let ng = self.ng(&[a]);
        self.push(v, Op::Softmax(a), ng)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        let ng = self.ng(&[a]);
        self.push(v, Op::SliceCols(a, start), ng)
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.value(a).slice(s![start..start + len, ..]).to_owned();
        let ng = self.ng(&[a]);
        self.push(v, Op::SliceRows(a, start), ng)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts agree");
        let ng = self.ng(parts);
        self.push(v, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("column counts agree");
        let ng = self.ng(parts);
        self.push(v, Op::ConcatRows(parts.to_vec()), ng)
    }

    /// Column-wise mean over rows, producing a 1 x n row.
    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let v = self
            .value(a)
            .mean_axis(Axis(0))
            .expect("non-empty")
            .insert_axis(Axis(0));
        let ng = self.ng(&[a]);
        self.push(v, Op::MeanRows(a), ng)
    }

    pub fn l2_normalize_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let mut v = self.value(a).clone();
        let mut norms = Array1::zeros(v.nrows());
        for (mut row, n) in v.rows_mut().into_iter().zip(norms.iter_mut()) {
            let norm = row.iter().map(|&x| x * x).sum::<F>().sqrt();
            if norm == F::zero() || !norm.is_finite() {
                return Err(Error::ZeroNorm);
            }
            *n = norm;
            row.mapv_inplace(|x| x / norm);
        }
        let ng = self.ng(&[a]);
        Ok(self.push(v, Op::L2NormRows(a, norms), ng))
    }

    /// Unfolds a T x C sequence into ceil(T / stride) rows of `kernel * C`
    /// values using same (zero) padding, so a matmul implements a 1-d
    /// convolution. Column layout is `tap * C + channel`.
    pub fn im2col(&mut self, x: NodeId, kernel: usize, stride: usize) -> NodeId {
        let xv = self.value(x);
        let (t, c) = xv.dim();
        let out_len = t.div_ceil(stride);
        let pad = (kernel - 1) / 2;
        let mut v = Array2::zeros((out_len, kernel * c));
        for o in 0..out_len {
            for tap in 0..kernel {
                let pos = (o * stride + tap) as isize - pad as isize;
                if pos < 0 || pos as usize >= t {
                    continue;
                }
                v.slice_mut(s![o, tap * c..(tap + 1) * c])
                    .assign(&xv.row(pos as usize));
            }
        }
        let ng = self.ng(&[x]);
        self.push(v, Op::Im2Col { x, kernel, stride }, ng)
    }

    /// Symmetric (or row-only) infoNCE over a square similarity node.
    pub fn info_nce(&mut self, sim: NodeId, tau: f64, symmetric: bool) -> Result<NodeId> {
        let (l, grad) = loss::info_nce_with_grad(self.value(sim).view(), tau, symmetric)?;
        let ng = self.ng(&[sim]);
        Ok(self.push(Array2::from_elem((1, 1), l), Op::Precomputed(sim, grad), ng))
    }

    /// Mean softmax cross entropy of a logits node.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let (l, grad) = loss::cross_entropy_with_grad(self.value(logits).view(), labels)?;
        let ng = self.ng(&[logits]);
        Ok(self.push(
            Array2::from_elem((1, 1), l),
            Op::Precomputed(logits, grad),
            ng,
        ))
    }

    /// Backpropagates `seed` (same shape as the root value) from `root`.
    pub fn backward(&self, root: NodeId, seed: Array2<F>) -> Gradients<F> {
        assert_eq!(seed.dim(), self.value(root).dim(), "seed shape");
        let mut grads: Vec<Option<Array2<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    /// Backward pass for a scalar root.
    pub fn backward_scalar(&self, root: NodeId) -> Gradients<F> {
        self.backward(root, Array2::ones((1, 1)))
    }

    fn accumulate(&self, grads: &mut [Option<Array2<F>>], id: NodeId, g: Array2<F>) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn propagate(&self, node: &Node<F>, g: &Array2<F>, grads: &mut [Option<Array2<F>>]) {
        match &node.op {
            Op::Leaf | Op::Fixed => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, self.value(*a).t().dot(g));
                }
            }
            Op::MatMulNt(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.dot(self.value(*b)));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.t().dot(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddScaled(a, b, alpha) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g * *alpha);
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                if self.wants(*row) {
                    self.accumulate(grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g * *s),
            Op::MulConst(a, mask) => self.accumulate(grads, *a, g * mask),
            Op::Gelu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(self.value(*a))
                    .for_each(|d, &x| *d *= gelu_grad(x));
                self.accumulate(grads, *a, d);
            }
            Op::Tanh(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(&node.value)
                    .for_each(|d, &y| *d *= F::one() - y * y);
                self.accumulate(grads, *a, d);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                if self.wants(*gamma) {
                    self.accumulate(
                        grads,
                        *gamma,
                        (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)),
                    );
                }
                if self.wants(*beta) {
                    self.accumulate(grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.wants(*x) {
                    let dxhat = g * self.value(*gamma);
                    let n = F::lit(xhat.ncols() as f64);
                    let mut dx = Array2::zeros(xhat.dim());
                    for (((mut out, dh), xh), &is) in dx
                        .rows_mut()
                        .into_iter()
                        .zip(dxhat.rows())
                        .zip(xhat.rows())
                        .zip(inv_std.iter())
                    {
                        let mean_dh = dh.sum() / n;
                        let mean_dh_xh =
                            dh.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<F>() / n;
                        Zip::from(&mut out)
                            .and(&dh)
                            .and(&xh)
                            .for_each(|o, &d, &h| *o = is * (d - mean_dh - h * mean_dh_xh));
                    }
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let mut d = g * y;
                for (mut drow, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
                    let dot = drow.sum();
                    Zip::from(&mut drow)
                        .and(&yrow)
                        .for_each(|d, &y| *d -= y * dot);
                }
                self.accumulate(grads, *a, d);
            }
            Op::SliceCols(a, start) => {
                if self.wants(*a) {
                    let mut d = Array2::zeros(self.value(*a).dim());
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                    self.accumulate(grads, *a, d);
                }
            }
            Op::SliceRows(a, start) => {
                if self.wants(*a) {
                    let mut d = Array2::zeros(self.value(*a).dim());
                    d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(g);
                    self.accumulate(grads, *a, d);
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).ncols();
                    if self.wants(p) {
                        self.accumulate(grads, p, g.slice(s![.., off..off + w]).to_owned());
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let h = self.value(p).nrows();
                    if self.wants(p) {
                        self.accumulate(grads, p, g.slice(s![off..off + h, ..]).to_owned());
                    }
                    off += h;
                }
            }
            Op::MeanRows(a) => {
                let rows = self.value(*a).nrows();
                let inv = F::lit(1.0 / rows as f64);
                let row = g.row(0).mapv(|v| v * inv);
                let d = row
                    .broadcast((rows, g.ncols()))
                    .expect("broadcast")
                    .to_owned();
                self.accumulate(grads, *a, d);
            }
            Op::L2NormRows(a, norms) => {
                let y = &node.value;
                let mut d = g.clone();
                for ((mut drow, yrow), &n) in
                    d.rows_mut().into_iter().zip(y.rows()).zip(norms.iter())
                {
                    let dot = drow
                        .iter()
                        .zip(yrow.iter())
                        .map(|(&a, &b)| a * b)
                        .sum::<F>();
                    Zip::from(&mut drow)
                        .and(&yrow)
                        .for_each(|d, &y| *d = (*d - y * dot) / n);
                }
                self.accumulate(grads, *a, d);
            }
            Op::Im2Col { x, kernel, stride } => {
                if self.wants(*x) {
                    let (t, c) = self.value(*x).dim();
                    let pad = (kernel - 1) / 2;
                    let mut d = Array2::zeros((t, c));
                    for o in 0..g.nrows() {
                        for tap in 0..*kernel {
                            let pos = (o * stride + tap) as isize - pad as isize;
                            if pos < 0 || pos as usize >= t {
                                continue;
                            }
                            let mut row = d.row_mut(pos as usize);
                            row += &g.slice(s![o, tap * c..(tap + 1) * c]);
                        }
                    }
                    self.accumulate(grads, *x, d);
                }
            }
            Op::Precomputed(a, local) => {
                let s = g[[0, 0]];
                self.accumulate(grads, *a, local * s);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn fd_check<B>(inputs: Vec<Array2<f64>>, build: B)
    where
        B: Fn(&mut Graph<f64>, &[NodeId]) -> NodeId,
    {
        let mut g = Graph::new();
        let ids: Vec<_> = inputs.iter().map(|v| g.variable(v.clone())).collect();
        let out = build(&mut g, &ids);
        // reduce to a scalar via a fixed random projection
        let w = Array2::from_shape_fn(g.value(out).dim(), |(i, j)| {
            ((i * 7 + j * 3) % 5) as f64 - 1.7
        });
        let grads = g.backward(out, w.clone());
        let eval = |inp: &[Array2<f64>]| {
            let mut g = Graph::new();
            let ids: Vec<_> = inp.iter().map(|v| g.variable(v.clone())).collect();
            let out = build(&mut g, &ids);
            (g.value(out) * &w).sum()
        };
        let eps = 1e-6;
        for (k, inp) in inputs.iter().enumerate() {
            let analytic = grads
                .get(ids[k])
                .cloned()
                .unwrap_or_else(|| Array2::zeros(inp.dim()));
            for idx in 0..inp.len() {
                let mut plus = inputs.clone();
                let mut minus = inputs.clone();
                plus[k].as_slice_mut().unwrap()[idx] += eps;
                minus[k].as_slice_mut().unwrap()[idx] -= eps;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * eps);
                let an = analytic.as_slice().unwrap()[idx];
                assert!(
                    (fd - an).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "input {k} idx {idx}: fd {fd} analytic {an}"
                );
            }
        }
    }

    fn m(r: usize, c: usize, seed: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |(i, j)| {
            (((i * 31 + j * 17 + seed * 13) % 23) as f64 / 11.0) - 1.0
        })
    }

    #[test]
    fn matmul_family() {
        fd_check(vec![m(3, 4, 1), m(4, 2, 2)], |g, x| g.matmul(x[0], x[1]));
        fd_check(vec![m(3, 4, 1), m(5, 4, 2)], |g, x| g.matmul_nt(x[0], x[1]));
        fd_check(vec![m(3, 4, 1), m(1, 4, 2)], |g, x| g.add_row(x[0], x[1]));
        fd_check(vec![m(3, 4, 1), m(3, 4, 2)], |g, x| {
            g.add_scaled(x[0], x[1], 0.3)
        });
    }

    #[test]
    fn nonlinearities() {
        fd_check(vec![m(3, 4, 3)], |g, x| g.gelu(x[0]));
        fd_check(vec![m(3, 4, 3)], |g, x| g.tanh(x[0]));
        fd_check(vec![m(3, 5, 4)], |g, x| g.softmax_rows(x[0], None));
        fd_check(vec![m(3, 5, 4)], |g, x| g.softmax_rows(x[0], Some(3)));
        fd_check(vec![m(3, 5, 5), m(1, 5, 6), m(1, 5, 7)], |g, x| {
            g.layer_norm(x[0], x[1], x[2])
        });
        fd_check(vec![m(3, 5, 5)], |g, x| g.l2_normalize_rows(x[0]).unwrap());
    }

    #[test]
    fn structural_ops() {
        fd_check(vec![m(4, 6, 1)], |g, x| g.slice_cols(x[0], 2, 3));
        fd_check(vec![m(4, 6, 1)], |g, x| g.slice_rows(x[0], 1, 2));
        fd_check(vec![m(4, 2, 1), m(4, 3, 2)], |g, x| {
            g.concat_cols(&[x[0], x[1]])
        });
        fd_check(vec![m(2, 3, 1), m(4, 3, 2)], |g, x| {
            g.concat_rows(&[x[0], x[1]])
        });
        fd_check(vec![m(4, 3, 1)], |g, x| g.mean_rows(x[0]));
        fd_check(vec![m(7, 2, 1)], |g, x| g.im2col(x[0], 3, 1));
        fd_check(vec![m(7, 2, 1)], |g, x| g.im2col(x[0], 3, 2));
        fd_check(vec![m(8, 2, 1)], |g, x| g.im2col(x[0], 5, 3));
    }

    #[test]
    fn losses() {
        fd_check(vec![m(3, 3, 9)], |g, x| {
            g.info_nce(x[0], 0.5, true).unwrap()
        });
        fd_check(vec![m(3, 3, 9)], |g, x| {
            g.info_nce(x[0], 0.5, false).unwrap()
        });
        fd_check(vec![m(3, 4, 9)], |g, x| {
            g.cross_entropy(x[0], &[1, 0, 3]).unwrap()
        });
    }

    #[test]
    fn im2col_layout_same_padding() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(array![[1.0, 10.0], [2.0, 20.0], [3.0, 30.0]]);
        let c = g.im2col(x, 3, 1);
        assert_eq!(
            g.value(c),
            &array![
                [0.0, 0.0, 1.0, 10.0, 2.0, 20.0],
                [1.0, 10.0, 2.0, 20.0, 3.0, 30.0],
                [2.0, 20.0, 3.0, 30.0, 0.0, 0.0]
            ]
        );
    }

    #[test]
    fn masked_softmax_zeroes_padding() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(array![[1.0, 2.0, 100.0]]);
        let p = g.softmax_rows(x, Some(2));
        let v = g.value(p);
        assert_eq!(v[[0, 2]], 0.0);
        assert!((v.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(m(2, 2, 1));
        let b = g.variable(m(2, 2, 2));
        let c = g.matmul(a, b);
        let s = g.mean_rows(c);
        let grads = g.backward(s, Array2::ones((1, 2)));
        assert!(grads.get(a).is_none());
        assert!(grads.get(b).is_some());
    }
}
