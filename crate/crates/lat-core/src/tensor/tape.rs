//! Wengert-list reverse-mode differentiation.
//!
//! A [`Tape`] records every forward operation in topological order; [`Var`]s
//! are handles into it. [`Tape::backward`] walks the list once in reverse and
//! accumulates gradients into the trainable leaves. Shape mismatches panic
//! (they are caller bugs); contract-level failures (fully masked softmax row,
//! non-scalar loss) surface as errors.

use super::gemm;
use super::{Real, Tensor};
use crate::error::{Error, Result};
use std::rc::Rc;

/// Pre-softmax stand-in for -infinity at masked positions.
pub const MASK_NEG: Real = -1e9;

/// Row-wise attention mask: `masked[r * cols + c]` excludes column c of row r
/// from the softmax. Masked output entries are exactly zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SoftmaxMask {
    pub rows: usize,
    pub cols: usize,
    pub masked: Vec<bool>,
}

impl SoftmaxMask {
    pub fn none(rows: usize, cols: usize) -> Self {
        Self { rows, cols, masked: vec![false; rows * cols] }
    }

    pub fn from_pairs(rows: usize, cols: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut masked = vec![false; rows * cols];
        for (r, c) in pairs {
            assert!(r < rows && c < cols, "mask index ({r},{c}) out of shape {rows}x{cols}");
            masked[r * cols + c] = true;
        }
        Self { rows, cols, masked }
    }

    #[inline]
    pub fn is_masked(&self, r: usize, c: usize) -> bool {
        self.masked[r * self.cols + c]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    /// A B^T without materializing the transpose.
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, Real),
    ConcatRows(Var, Var),
    SliceRows(Var, usize),
    SelectRows(Var, Rc<Vec<usize>>),
    Transpose(Var),
    MaskedSoftmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, eps: Real },
    Mish(Var),
    Tanh(Var),
    LnClamped(Var, Real),
    RowGather(Var, Rc<Vec<usize>>),
    ProdAll(Var),
    SumAll(Var),
    /// Vertical repetition of a block; gradients sum over the copies.
    TileRows(Var, usize),
    SliceCols(Var, usize),
    /// out_b = shared . stacked_b for every row block b of the stacked operand.
    SharedBlockMatMul { shared: Var, stacked: Var },
    ConcatCols(Vec<Var>),
    /// Adds a 1 x cols row vector to every row.
    AddRowBroadcast(Var, Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients keyed by tape node, populated by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        debug_assert!(value.all_finite(), "non-finite values recorded on tape");
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Registers a trainable leaf (gradients are retained for it).
    pub fn leaf(&mut self, value: Tensor, trainable: bool) -> Var {
        self.push(value, Op::Leaf, trainable)
    }

    /// Registers a constant (no gradient flows into it).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(ta.cols, tb.rows, "matmul shape mismatch {}x{} . {}x{}", ta.rows, ta.cols, tb.rows, tb.cols);
        let mut out = Tensor::zeros(ta.rows, tb.cols);
        gemm::matmul_nn(&mut out.data, &ta.data, &tb.data, ta.rows, ta.cols, tb.cols);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    /// `a b^T` for row-major operands of shapes m x n and k x n.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(ta.cols, tb.cols, "matmul_nt shape mismatch {}x{} . ({}x{})^T", ta.rows, ta.cols, tb.rows, tb.cols);
        let mut out = Tensor::zeros(ta.rows, tb.rows);
        gemm::matmul_nt(&mut out.data, &ta.data, &tb.data, ta.rows, ta.cols, tb.rows);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::MatMulNT(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert!(ta.same_shape(tb), "add shape mismatch");
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect();
        let out = Tensor::from_vec(ta.rows, ta.cols, data);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert!(ta.same_shape(tb), "sub shape mismatch");
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x - y).collect();
        let out = Tensor::from_vec(ta.rows, ta.cols, data);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Sub(a, b), ng)
    }

    pub fn elementwise_mul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert!(ta.same_shape(tb), "elementwise_mul shape mismatch");
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect();
        let out = Tensor::from_vec(ta.rows, ta.cols, data);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, factor: Real) -> Var {
        let ta = &self.nodes[a.0].value;
        let data = ta.data.iter().map(|x| x * factor).collect();
        let out = Tensor::from_vec(ta.rows, ta.cols, data);
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, factor), ng)
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(ta.cols, tb.cols, "concat_rows column mismatch");
        let mut data = Vec::with_capacity(ta.len() + tb.len());
        data.extend_from_slice(&ta.data);
        data.extend_from_slice(&tb.data);
        let out = Tensor::from_vec(ta.rows + tb.rows, ta.cols, data);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::ConcatRows(a, b), ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let ta = &self.nodes[a.0].value;
        assert!(start + len <= ta.rows, "slice_rows out of bounds");
        let data = ta.data[start * ta.cols..(start + len) * ta.cols].to_vec();
        let out = Tensor::from_vec(len, ta.cols, data);
        let ng = self.needs(a);
        self.push(out, Op::SliceRows(a, start), ng)
    }

    /// Gathers an arbitrary subset of rows (used for message-row selection).
    pub fn select_rows(&mut self, a: Var, rows: Rc<Vec<usize>>) -> Var {
        let ta = &self.nodes[a.0].value;
        let mut data = Vec::with_capacity(rows.len() * ta.cols);
        for &r in rows.iter() {
            assert!(r < ta.rows, "select_rows index {r} out of {}", ta.rows);
            data.extend_from_slice(ta.row(r));
        }
        let out = Tensor::from_vec(rows.len(), ta.cols, data);
        let ng = self.needs(a);
        self.push(out, Op::SelectRows(a, rows), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let ta = &self.nodes[a.0].value;
        let mut out = Tensor::zeros(ta.cols, ta.rows);
        for r in 0..ta.rows {
            for c in 0..ta.cols {
                out.set(c, r, ta.get(r, c));
            }
        }
        let ng = self.needs(a);
        self.push(out, Op::Transpose(a), ng)
    }

    /// Row-wise softmax with masked entries pinned to exactly zero. Masked
    /// positions are excluded from the max subtraction and the normalizer,
    /// which is numerically identical to adding [`MASK_NEG`] pre-softmax for
    /// any sane logit range.
    pub fn masked_row_softmax(&mut self, a: Var, mask: Rc<SoftmaxMask>) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        assert_eq!((ta.rows, ta.cols), (mask.rows, mask.cols), "mask shape mismatch");
        let mut out = Tensor::zeros(ta.rows, ta.cols);
        for r in 0..ta.rows {
            let row = ta.row(r);
            let mut max = Real::NEG_INFINITY;
            for (c, &v) in row.iter().enumerate() {
                if !mask.is_masked(r, c) && v > max {
                    max = v;
                }
            }
            if max == Real::NEG_INFINITY {
                return Err(Error::Contract(format!("softmax row {r} is fully masked")));
            }
            let mut sum = 0.0;
            for (c, &v) in row.iter().enumerate() {
                if !mask.is_masked(r, c) {
                    let e = (v - max).exp();
                    out.set(r, c, e);
                    sum += e;
                }
            }
            for c in 0..ta.cols {
                if !mask.is_masked(r, c) {
                    out.set(r, c, out.get(r, c) / sum);
                }
            }
        }
        let ng = self.needs(a);
        Ok(self.push(out, Op::MaskedSoftmax(a), ng))
    }

    /// Plain row softmax (empty mask).
    pub fn row_softmax(&mut self, a: Var) -> Var {
        let (rows, cols) = {
            let t = &self.nodes[a.0].value;
            (t.rows, t.cols)
        };
        self.masked_row_softmax(a, Rc::new(SoftmaxMask::none(rows, cols)))
            .expect("unmasked softmax cannot fail")
    }

    /// Per-row normalization over columns followed by the affine (gain, bias),
    /// both 1 x cols.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: Real) -> Var {
        let (tx, tg, tb) = (
            &self.nodes[x.0].value,
            &self.nodes[gain.0].value,
            &self.nodes[bias.0].value,
        );
        assert_eq!(tg.rows, 1, "layer_norm gain must be a row vector");
        assert_eq!(tb.rows, 1, "layer_norm bias must be a row vector");
        assert!(tg.cols == tx.cols && tb.cols == tx.cols, "layer_norm width mismatch");
        let mut out = Tensor::zeros(tx.rows, tx.cols);
        let d = tx.cols as Real;
        for r in 0..tx.rows {
            let row = tx.row(r);
            let mean = row.iter().sum::<Real>() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / d;
            let inv = 1.0 / (var + eps).sqrt();
            for c in 0..tx.cols {
                let xhat = (row[c] - mean) * inv;
                out.set(r, c, tg.data[c] * xhat + tb.data[c]);
            }
        }
        let ng = self.needs(x) || self.needs(gain) || self.needs(bias);
        self.push(out, Op::LayerNorm { x, gain, bias, eps }, ng)
    }

    pub fn mish(&mut self, a: Var) -> Var {
        let ta = &self.nodes[a.0].value;
        let data = ta.data.iter().map(|&x| x * softplus(x).tanh()).collect();
        let out = Tensor::from_vec(ta.rows, ta.cols, data);
        let ng = self.needs(a);
        self.push(out, Op::Mish(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let ta = &self.nodes[a.0].value;
        let data = ta.data.iter().map(|x| x.tanh()).collect();
        let out = Tensor::from_vec(ta.rows, ta.cols, data);
        let ng = self.needs(a);
        self.push(out, Op::Tanh(a), ng)
    }

    /// ln(max(x, floor)) -- keeps log-losses finite near zero.
    pub fn ln_clamped(&mut self, a: Var, floor: Real) -> Var {
        assert!(floor > 0.0);
        let ta = &self.nodes[a.0].value;
        let data = ta.data.iter().map(|&x| x.max(floor).ln()).collect();
        let out = Tensor::from_vec(ta.rows, ta.cols, data);
        let ng = self.needs(a);
        self.push(out, Op::LnClamped(a, floor), ng)
    }

    /// Picks one column per row: out[r] = a[r, cols[r]].
    pub fn row_gather(&mut self, a: Var, cols: Rc<Vec<usize>>) -> Var {
        let ta = &self.nodes[a.0].value;
        assert_eq!(cols.len(), ta.rows, "row_gather needs one column per row");
        let data = cols
            .iter()
            .enumerate()
            .map(|(r, &c)| {
                assert!(c < ta.cols, "row_gather column {c} out of {}", ta.cols);
                ta.get(r, c)
            })
            .collect();
        let out = Tensor::from_vec(ta.rows, 1, data);
        let ng = self.needs(a);
        self.push(out, Op::RowGather(a, cols), ng)
    }

    /// Product of all entries, as a 1x1 tensor.
    pub fn prod_all(&mut self, a: Var) -> Var {
        let ta = &self.nodes[a.0].value;
        let prod = ta.data.iter().product();
        let ng = self.needs(a);
        self.push(Tensor::scalar(prod), Op::ProdAll(a), ng)
    }

    /// Sum of all entries, as a 1x1 tensor.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let ta = &self.nodes[a.0].value;
        let sum = ta.data.iter().sum();
        let ng = self.needs(a);
        self.push(Tensor::scalar(sum), Op::SumAll(a), ng)
    }

    /// Stacks `count` copies of `a` vertically.
    pub fn tile_rows(&mut self, a: Var, count: usize) -> Var {
        assert!(count >= 1, "tile_rows needs count >= 1");
        let ta = &self.nodes[a.0].value;
        let mut data = Vec::with_capacity(ta.len() * count);
        for _ in 0..count {
            data.extend_from_slice(&ta.data);
        }
        let out = Tensor::from_vec(ta.rows * count, ta.cols, data);
        let ng = self.needs(a);
        self.push(out, Op::TileRows(a, count), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let ta = &self.nodes[a.0].value;
        assert!(start + len <= ta.cols, "slice_cols out of bounds");
        let mut data = Vec::with_capacity(ta.rows * len);
        for r in 0..ta.rows {
            data.extend_from_slice(&ta.row(r)[start..start + len]);
        }
        let out = Tensor::from_vec(ta.rows, len, data);
        let ng = self.needs(a);
        self.push(out, Op::SliceCols(a, start), ng)
    }

    /// Multiplies each q-row block of `stacked` ((B q) x d) by the shared
    /// p x q matrix, producing (B p) x d. One tape node per batched product.
    pub fn shared_block_matmul(&mut self, shared: Var, stacked: Var) -> Var {
        let (ts, tb) = (&self.nodes[shared.0].value, &self.nodes[stacked.0].value);
        let (p, q, d) = (ts.rows, ts.cols, tb.cols);
        assert!(q > 0 && tb.rows % q == 0, "stacked rows must be a multiple of shared cols");
        let blocks = tb.rows / q;
        let mut out = Tensor::zeros(blocks * p, d);
        for b in 0..blocks {
            gemm::matmul_nn(
                &mut out.data[b * p * d..(b + 1) * p * d],
                &ts.data,
                &tb.data[b * q * d..(b + 1) * q * d],
                p,
                q,
                d,
            );
        }
        let ng = self.needs(shared) || self.needs(stacked);
        self.push(out, Op::SharedBlockMatMul { shared, stacked }, ng)
    }

    /// Horizontal concatenation of equal-height blocks.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.nodes[parts[0].0].value.rows;
        let total: usize = parts
            .iter()
            .map(|v| {
                let t = &self.nodes[v.0].value;
                assert_eq!(t.rows, rows, "concat_cols row mismatch");
                t.cols
            })
            .sum();
        let mut out = Tensor::zeros(rows, total);
        let mut col = 0;
        for v in parts {
            let t = &self.nodes[v.0].value;
            for r in 0..rows {
                out.data[r * total + col..r * total + col + t.cols].copy_from_slice(t.row(r));
            }
            col += t.cols;
        }
        let ng = parts.iter().any(|v| self.needs(*v));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    /// x + row broadcast over every row of x; `row` is 1 x cols.
    pub fn add_row_broadcast(&mut self, x: Var, row: Var) -> Var {
        let (tx, tr) = (&self.nodes[x.0].value, &self.nodes[row.0].value);
        assert_eq!(tr.rows, 1, "broadcast operand must be a row vector");
        assert_eq!(tr.cols, tx.cols, "broadcast width mismatch");
        let mut out = tx.clone();
        for r in 0..tx.rows {
            for c in 0..tx.cols {
                out.data[r * tx.cols + c] += tr.data[c];
            }
        }
        let ng = self.needs(x) || self.needs(row);
        self.push(out, Op::AddRowBroadcast(x, row), ng)
    }

    /// Reverse accumulation from a 1x1 loss. Gradients sum over all use sites;
    /// every node is visited exactly once in reverse topological order.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = &self.nodes[loss.0].value;
        if lt.rows != 1 || lt.cols != 1 {
            return Err(Error::Argument(format!(
                "backward needs a 1x1 loss, got {}x{}",
                lt.rows, lt.cols
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                grads[id] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue; // gradient stays for trainable leaves
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, id: usize, g: &Tensor, grads: &mut Vec<Option<Tensor>>) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                if self.needs(*a) {
                    let da = self.buf(grads, *a);
                    gemm::matmul_nt(&mut da.data, &g.data, &tb.data, ta.rows, tb.cols, ta.cols);
                }
                if self.needs(*b) {
                    let db = self.buf(grads, *b);
                    gemm::matmul_tn(&mut db.data, &ta.data, &g.data, ta.rows, ta.cols, tb.cols);
                }
            }
            Op::MatMulNT(a, b) => {
                // y = a b^T; dy/da = g b, dy/db = g^T a.
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                if self.needs(*a) {
                    let da = self.buf(grads, *a);
                    gemm::matmul_nn(&mut da.data, &g.data, &tb.data, ta.rows, tb.rows, tb.cols);
                }
                if self.needs(*b) {
                    let db = self.buf(grads, *b);
                    gemm::matmul_tn(&mut db.data, &g.data, &ta.data, ta.rows, tb.rows, ta.cols);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.needs(*v) {
                        let dv = self.buf(grads, *v);
                        for (d, &gi) in dv.data.iter_mut().zip(&g.data) {
                            *d += gi;
                        }
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    let da = self.buf(grads, *a);
                    for (d, &gi) in da.data.iter_mut().zip(&g.data) {
                        *d += gi;
                    }
                }
                if self.needs(*b) {
                    let db = self.buf(grads, *b);
                    for (d, &gi) in db.data.iter_mut().zip(&g.data) {
                        *d -= gi;
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let tb = &self.nodes[b.0].value.data;
                    let da = self.buf(grads, *a);
                    for ((d, &gi), &bv) in da.data.iter_mut().zip(&g.data).zip(tb) {
                        *d += gi * bv;
                    }
                }
                if self.needs(*b) {
                    let ta = &self.nodes[a.0].value.data;
                    let db = self.buf(grads, *b);
                    for ((d, &gi), &av) in db.data.iter_mut().zip(&g.data).zip(ta) {
                        *d += gi * av;
                    }
                }
            }
            Op::Scale(a, factor) => {
                if self.needs(*a) {
                    let da = self.buf(grads, *a);
                    for (d, &gi) in da.data.iter_mut().zip(&g.data) {
                        *d += gi * factor;
                    }
                }
            }
            Op::ConcatRows(a, b) => {
                let a_rows = self.nodes[a.0].value.rows;
                let cols = self.nodes[a.0].value.cols;
                if self.needs(*a) {
                    let da = self.buf(grads, *a);
                    for (d, &gi) in da.data.iter_mut().zip(&g.data[..a_rows * cols]) {
                        *d += gi;
                    }
                }
                if self.needs(*b) {
                    let db = self.buf(grads, *b);
                    for (d, &gi) in db.data.iter_mut().zip(&g.data[a_rows * cols..]) {
                        *d += gi;
                    }
                }
            }
            Op::SliceRows(a, start) => {
                if self.needs(*a) {
                    let cols = self.nodes[a.0].value.cols;
                    let da = self.buf(grads, *a);
                    let base = start * cols;
                    for (i, &gi) in g.data.iter().enumerate() {
                        da.data[base + i] += gi;
                    }
                }
            }
            Op::SelectRows(a, rows) => {
                if self.needs(*a) {
                    let cols = self.nodes[a.0].value.cols;
                    let da = self.buf(grads, *a);
                    for (out_r, &src_r) in rows.iter().enumerate() {
                        for c in 0..cols {
                            da.data[src_r * cols + c] += g.data[out_r * cols + c];
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                if self.needs(*a) {
                    let (rows, cols) = {
                        let t = &self.nodes[a.0].value;
                        (t.rows, t.cols)
                    };
                    let da = self.buf(grads, *a);
                    for r in 0..rows {
                        for c in 0..cols {
                            da.data[r * cols + c] += g.data[c * rows + r];
                        }
                    }
                }
            }
            Op::MaskedSoftmax(a) => {
                if self.needs(*a) {
                    // dx = y . (g - <g, y>) per row; masked entries have y = 0.
                    let y = &node.value;
                    let da = self.buf(grads, *a);
                    for r in 0..y.rows {
                        let dot: Real = (0..y.cols).map(|c| g.get(r, c) * y.get(r, c)).sum();
                        for c in 0..y.cols {
                            da.data[r * y.cols + c] += y.get(r, c) * (g.get(r, c) - dot);
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let tx = &self.nodes[x.0].value;
                let tg = &self.nodes[gain.0].value;
                let d = tx.cols as Real;
                for r in 0..tx.rows {
                    let row = tx.row(r);
                    let mean = row.iter().sum::<Real>() / d;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / d;
                    let inv = 1.0 / (var + eps).sqrt();
                    let xhat: Vec<Real> = row.iter().map(|v| (v - mean) * inv).collect();
                    let grow = &g.data[r * tx.cols..(r + 1) * tx.cols];
                    if self.needs(*gain) {
                        let dg = self.buf(grads, *gain);
                        for c in 0..tx.cols {
                            dg.data[c] += grow[c] * xhat[c];
                        }
                    }
                    if self.needs(*bias) {
                        let db = self.buf(grads, *bias);
                        for c in 0..tx.cols {
                            db.data[c] += grow[c];
                        }
                    }
                    if self.needs(*x) {
                        let h: Vec<Real> = (0..tx.cols).map(|c| tg.data[c] * grow[c]).collect();
                        let mean_h = h.iter().sum::<Real>() / d;
                        let mean_hx = h.iter().zip(&xhat).map(|(a, b)| a * b).sum::<Real>() / d;
                        let dx = self.buf(grads, *x);
                        for c in 0..tx.cols {
                            dx.data[r * tx.cols + c] += inv * (h[c] - mean_h - xhat[c] * mean_hx);
                        }
                    }
                }
            }
            Op::Mish(a) => {
                if self.needs(*a) {
                    let ta = &self.nodes[a.0].value.data;
                    let da = self.buf(grads, *a);
                    for ((d, &gi), &x) in da.data.iter_mut().zip(&g.data).zip(ta) {
                        let t = softplus(x).tanh();
                        *d += gi * (t + x * (1.0 - t * t) * sigmoid(x));
                    }
                }
            }
            Op::Tanh(a) => {
                if self.needs(*a) {
                    let ty = &node.value.data;
                    let da = self.buf(grads, *a);
                    for ((d, &gi), &y) in da.data.iter_mut().zip(&g.data).zip(ty) {
                        *d += gi * (1.0 - y * y);
                    }
                }
            }
            Op::LnClamped(a, floor) => {
                if self.needs(*a) {
                    let ta = &self.nodes[a.0].value.data;
                    let floor = *floor;
                    let da = self.buf(grads, *a);
                    for ((d, &gi), &x) in da.data.iter_mut().zip(&g.data).zip(ta) {
                        if x > floor {
                            *d += gi / x;
                        }
                    }
                }
            }
            Op::RowGather(a, cols) => {
                if self.needs(*a) {
                    let width = self.nodes[a.0].value.cols;
                    let da = self.buf(grads, *a);
                    for (r, &c) in cols.iter().enumerate() {
                        da.data[r * width + c] += g.data[r];
                    }
                }
            }
            Op::ProdAll(a) => {
                if self.needs(*a) {
                    let ta = &self.nodes[a.0].value.data;
                    let gi = g.data[0];
                    let n = ta.len();
                    // prefix_i * suffix_i, stable in the presence of zeros
                    let mut prefix = vec![1.0 as Real; n];
                    for i in 1..n {
                        prefix[i] = prefix[i - 1] * ta[i - 1];
                    }
                    let mut suffix = 1.0 as Real;
                    let da = self.buf(grads, *a);
                    for i in (0..n).rev() {
                        da.data[i] += gi * prefix[i] * suffix;
                        suffix *= ta[i];
                    }
                }
            }
            Op::SumAll(a) => {
                if self.needs(*a) {
                    let gi = g.data[0];
                    let da = self.buf(grads, *a);
                    for d in da.data.iter_mut() {
                        *d += gi;
                    }
                }
            }
            Op::TileRows(a, count) => {
                if self.needs(*a) {
                    let block = self.nodes[a.0].value.len();
                    let da = self.buf(grads, *a);
                    for t in 0..*count {
                        for (i, d) in da.data.iter_mut().enumerate() {
                            *d += g.data[t * block + i];
                        }
                    }
                }
            }
            Op::SliceCols(a, start) => {
                if self.needs(*a) {
                    let cols = self.nodes[a.0].value.cols;
                    let width = g.cols;
                    let da = self.buf(grads, *a);
                    for r in 0..g.rows {
                        for c in 0..width {
                            da.data[r * cols + start + c] += g.data[r * width + c];
                        }
                    }
                }
            }
            Op::SharedBlockMatMul { shared, stacked } => {
                let (ts, tb) = (&self.nodes[shared.0].value, &self.nodes[stacked.0].value);
                let (p, q, d) = (ts.rows, ts.cols, tb.cols);
                let blocks = tb.rows / q;
                if self.needs(*shared) {
                    let ds = self.buf(grads, *shared);
                    for b in 0..blocks {
                        gemm::matmul_nt(
                            &mut ds.data,
                            &g.data[b * p * d..(b + 1) * p * d],
                            &tb.data[b * q * d..(b + 1) * q * d],
                            p,
                            d,
                            q,
                        );
                    }
                }
                if self.needs(*stacked) {
                    let db = self.buf(grads, *stacked);
                    for b in 0..blocks {
                        gemm::matmul_tn(
                            &mut db.data[b * q * d..(b + 1) * q * d],
                            &ts.data,
                            &g.data[b * p * d..(b + 1) * p * d],
                            p,
                            q,
                            d,
                        );
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut col = 0;
                let total = g.cols;
                for v in parts {
                    let width = self.nodes[v.0].value.cols;
                    if self.needs(*v) {
                        let dv = self.buf(grads, *v);
                        for r in 0..g.rows {
                            for c in 0..width {
                                dv.data[r * width + c] += g.data[r * total + col + c];
                            }
                        }
                    }
                    col += width;
                }
            }
            Op::AddRowBroadcast(x, row) => {
                if self.needs(*x) {
                    let dx = self.buf(grads, *x);
                    for (d, &gi) in dx.data.iter_mut().zip(&g.data) {
                        *d += gi;
                    }
                }
                if self.needs(*row) {
                    let dr = self.buf(grads, *row);
                    let cols = g.cols;
                    for r in 0..g.rows {
                        for c in 0..cols {
                            dr.data[c] += g.data[r * cols + c];
                        }
                    }
                }
            }
        }
    }

    /// Gradient accumulation buffer for a node, zero-initialized on first use.
    fn buf<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> &'g mut Tensor {
        let t = &self.nodes[v.0].value;
        grads[v.0].get_or_insert_with(|| Tensor::zeros(t.rows, t.cols))
    }
}

#[inline]
fn softplus(x: Real) -> Real {
    if x > 20.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(x: Real) -> Real {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor {
        Tensor::from_vec(rows, cols, v.iter().map(|&x| x as Real).collect())
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let eye = tape.constant(t(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        let a = tape.constant(t(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let out = tape.matmul(eye, a);
        assert_eq!(tape.value(out), tape.value(a));
    }

    #[test]
    fn concat_and_slice_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 4));
        let b = tape.constant(Tensor::filled(3, 4, 1.0));
        let cat = tape.concat_rows(a, b);
        assert_eq!((tape.value(cat).rows, tape.value(cat).cols), (5, 4));
        let s = tape.slice_rows(cat, 2, 3);
        assert_eq!(tape.value(s), tape.value(b));
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(2, 2, &[1.0, -2.0, 3.0, 0.5]), true);
        let loss = tape.sum_all(x);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &Tensor::filled(2, 2, 1.0));
    }

    #[test]
    fn grad_of_square_sum_is_two_x() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(1, 3, &[1.0, -2.0, 3.0]), true);
        let sq = tape.elementwise_mul(x, x);
        let loss = tape.sum_all(sq);
        let grads = tape.backward(loss).unwrap();
        let g = grads.get(x).unwrap();
        for (gi, xi) in g.data.iter().zip(&tape.value(x).data) {
            assert!((gi - 2.0 * xi).abs() < 1e-6);
        }
    }

    #[test]
    fn grad_of_matmul_sum_is_ones_bt() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(2, 3, &[0.1, 0.2, 0.3, -0.4, 0.5, -0.6]), true);
        let b = tape.constant(t(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let prod = tape.matmul(a, b);
        let loss = tape.sum_all(prod);
        let grads = tape.backward(loss).unwrap();
        let g = grads.get(a).unwrap();
        // d sum(AB) / dA = ones(2x2) B^T: row sums of B.
        let expect = [3.0, 7.0, 11.0, 3.0, 7.0, 11.0];
        for (gi, e) in g.data.iter().zip(expect) {
            assert!((gi - e as Real).abs() < 1e-5, "{gi} vs {e}");
        }
    }

    #[test]
    fn shared_subexpression_grads_sum_over_paths() {
        // y = f(x) + g(f(x)) with f = 2x and g = square.
        let mut tape = Tape::new();
        let x = tape.leaf(t(1, 1, &[3.0]), true);
        let f = tape.scale(x, 2.0);
        let g2 = tape.elementwise_mul(f, f);
        let y = tape.add(f, g2);
        let loss = tape.sum_all(y);
        let grads = tape.backward(loss).unwrap();
        // dy/dx = 2 + 2*(2x)*2 = 2 + 8x = 26 at x=3.
        assert!((grads.get(x).unwrap().data[0] - 26.0).abs() < 1e-5);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(2, 2), true);
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one_and_masked_are_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(t(2, 3, &[1.0, 2.0, 3.0, 0.0, 0.0, 0.0]));
        let mask = Rc::new(SoftmaxMask::from_pairs(2, 3, [(0, 2)]));
        let y = tape.masked_row_softmax(x, mask).unwrap();
        let yv = tape.value(y);
        assert_eq!(yv.get(0, 2), 0.0);
        // softmax of (1, 2) at the first two positions
        let e = ((1.0f64).exp(), (2.0f64).exp());
        let want = (e.0 / (e.0 + e.1), e.1 / (e.0 + e.1));
        assert!((yv.get(0, 0) as f64 - want.0).abs() < 1e-6);
        assert!((yv.get(0, 1) as f64 - want.1).abs() < 1e-6);
        // uniform row without mask: all 1/3
        for c in 0..3 {
            assert!((yv.get(1, c) - 1.0 / 3.0).abs() < 1e-6);
        }
        let sum0: Real = (0..3).map(|c| yv.get(0, c)).sum();
        assert!((sum0 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn softmax_single_unmasked_entry_is_one() {
        let mut tape = Tape::new();
        let x = tape.constant(t(1, 4, &[5.0, -2.0, 7.0, 0.0]));
        let mask = Rc::new(SoftmaxMask::from_pairs(1, 4, [(0, 0), (0, 2), (0, 3)]));
        let y = tape.masked_row_softmax(x, mask).unwrap();
        assert_eq!(tape.value(y).data, vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_fully_masked_row_is_contract_violation() {
        let mut tape = Tape::new();
        let x = tape.constant(t(1, 2, &[1.0, 2.0]));
        let mask = Rc::new(SoftmaxMask::from_pairs(1, 2, [(0, 0), (0, 1)]));
        assert!(matches!(
            tape.masked_row_softmax(x, mask),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn layer_norm_constant_row_is_bias() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::filled(1, 4, 2.5));
        let gain = tape.constant(Tensor::filled(1, 4, 1.0));
        let bias = tape.constant(Tensor::zeros(1, 4));
        let y = tape.layer_norm(x, gain, bias, 1e-5);
        for &v in &tape.value(y).data {
            assert!(v.abs() < 1e-4);
        }
    }

    #[test]
    fn layer_norm_already_normalized_row() {
        let mut tape = Tape::new();
        let x = tape.constant(t(1, 2, &[1.0, -1.0]));
        let gain = tape.constant(Tensor::filled(1, 2, 1.0));
        let bias = tape.constant(Tensor::zeros(1, 2));
        let y = tape.layer_norm(x, gain, bias, 0.0);
        assert!((tape.value(y).get(0, 0) - 1.0).abs() < 1e-5);
        assert!((tape.value(y).get(0, 1) + 1.0).abs() < 1e-5);
    }

    #[test]
    fn mish_values() {
        let mut tape = Tape::new();
        let x = tape.constant(t(1, 3, &[0.0, 20.0, -20.0]));
        let y = tape.mish(x);
        let yv = tape.value(y);
        assert_eq!(yv.get(0, 0), 0.0);
        assert!((yv.get(0, 1) - 20.0).abs() < 1e-6);
        assert!(yv.get(0, 2).abs() < 1e-6);
        let z = tape.tanh(x);
        assert_eq!(tape.value(z).get(0, 0), 0.0);
    }

    #[test]
    fn prod_all_and_row_gather() {
        let mut tape = Tape::new();
        let x = tape.constant(t(2, 2, &[0.5, 0.5, 0.25, 0.75]));
        let picked = tape.row_gather(x, Rc::new(vec![1, 0]));
        assert_eq!(tape.value(picked).data, vec![0.5, 0.25]);
        let prod = tape.prod_all(picked);
        assert!((tape.value(prod).data[0] - 0.125).abs() < 1e-6);
    }
}
