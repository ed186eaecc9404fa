//! Reverse-mode gradient tape over dense [`Tensor`] values.
//!
//! A [`Tape`] records every forward op in topological order; [`Tape::backward`]
//! walks the records in reverse and accumulates gradients into each leaf that
//! was registered with `requires_grad`. Repeated use of a value sums its
//! gradient contributions. All loops run in a fixed order, so identical
//! inputs produce bit-identical outputs and gradients.

use super::tensor::{matmul, matmul_a_bt_acc, matmul_at_b_acc, Tensor};
use thiserror::Error;

/// Handle to a value stored on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(pub(crate) usize);

#[derive(Debug, Error)]
pub enum TapeError {
    #[error("backward requires a scalar loss, got shape {0}x{1}")]
    NonScalarLoss(usize, usize),
    #[error("softmax row {0} has no valid entries but was not declared empty")]
    EmptySoftmaxRow(usize),
}

/// Row-wise boolean mask for [`Tape::masked_softmax`]. `true` marks a valid
/// (attended) entry. Rows where every entry is `false` produce an all-zero
/// output row rather than an error; callers that consider that a bug can
/// check [`Mask::empty_rows`] up front.
#[derive(Debug, Clone)]
pub struct Mask {
    pub rows: usize,
    pub cols: usize,
    pub valid: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, valid: Vec<bool>) -> Self {
        assert_eq!(valid.len(), rows * cols);
        Mask { rows, cols, valid }
    }

    /// Indices of rows with zero valid entries.
    pub fn empty_rows(&self) -> Vec<usize> {
        (0..self.rows)
            .filter(|&r| !self.valid[r * self.cols..(r + 1) * self.cols].contains(&true))
            .collect()
    }
}

enum Op {
    Leaf,
    Matmul,
    Add,
    /// x (r,c) + row-broadcast bias (1,c)
    AddBias,
    ScalarMul(f64),
    Mul,
    Relu,
    LeakyRelu(f64),
    /// concat along `axis` (0 = rows, 1 = cols)
    Concat {
        axis: usize,
    },
    SliceCols {
        start: usize,
    },
    /// collapse rows: out (1,c) with out[c] = sum_r x[r,c]
    SumRows,
    SumAll,
    MaskedSoftmax(Mask),
    /// sum of squared differences, scalar
    SquaredError,
    /// sum over entries of max(x,0) - x*z + ln(1+exp(-|x|))
    BceWithLogits,
    GatherRows(Vec<usize>),
    /// out[idx[e]] += x[e]
    ScatterAddRows {
        idx: Vec<usize>,
    },
    /// out[i,f] = sum_j alpha[i,j] * u[i*n+j, f]
    PairWeightedSum,
    Reshape,
    /// row-wise (x - mean) / sqrt(var + eps), no learned affine
    LayerNorm(f64),
}

struct Node {
    op: Op,
    inputs: Vec<VarId>,
    value: Tensor,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`VarId`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: VarId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `id`, or zeros of the given shape when it never
    /// received a contribution.
    pub fn get_or_zeros(&self, id: VarId, rows: usize, cols: usize) -> Tensor {
        match self.get(id) {
            Some(g) => g.clone(),
            None => Tensor::zeros(rows, cols),
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: VarId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, inputs: Vec<VarId>, value: Tensor) -> VarId {
        let requires_grad = inputs.iter().any(|&i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            op,
            inputs,
            value,
            requires_grad,
        });
        VarId(self.nodes.len() - 1)
    }

    /// Register an input value. Only leaves with `requires_grad` (and nodes
    /// downstream of them) receive gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> VarId {
        self.nodes.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            value,
            requires_grad,
        });
        VarId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> VarId {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> VarId {
        let out = matmul(self.value(a), self.value(b));
        self.push(Op::Matmul, vec![a, b], out)
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "add shapes differ");
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x + y).collect();
        let out = Tensor::from_vec(va.rows, va.cols, data);
        self.push(Op::Add, vec![a, b], out)
    }

    pub fn add_bias(&mut self, x: VarId, bias: VarId) -> VarId {
        let (vx, vb) = (self.value(x), self.value(bias));
        assert_eq!(vb.rows, 1, "bias must be a row vector");
        assert_eq!(vx.cols, vb.cols, "bias width differs");
        let mut out = vx.clone();
        for r in 0..out.rows {
            let row = &mut out.data[r * out.cols..(r + 1) * out.cols];
            for (o, b) in row.iter_mut().zip(&vb.data) {
                *o += b;
            }
        }
        self.push(Op::AddBias, vec![x, bias], out)
    }

    pub fn scalar_mul(&mut self, x: VarId, c: f64) -> VarId {
        let vx = self.value(x);
        let out = Tensor::from_vec(vx.rows, vx.cols, vx.data.iter().map(|v| v * c).collect());
        self.push(Op::ScalarMul(c), vec![x], out)
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> VarId {
        let nb = self.scalar_mul(b, -1.0);
        self.add(a, nb)
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> VarId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "mul shapes differ");
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x * y).collect();
        let out = Tensor::from_vec(va.rows, va.cols, data);
        self.push(Op::Mul, vec![a, b], out)
    }

    pub fn relu(&mut self, x: VarId) -> VarId {
        let vx = self.value(x);
        let out = Tensor::from_vec(
            vx.rows,
            vx.cols,
            vx.data
                .iter()
                .map(|&v| if v > 0.0 { v } else { 0.0 })
                .collect(),
        );
        self.push(Op::Relu, vec![x], out)
    }

    pub fn leaky_relu(&mut self, x: VarId, slope: f64) -> VarId {
        let vx = self.value(x);
        let out = Tensor::from_vec(
            vx.rows,
            vx.cols,
            vx.data
                .iter()
                .map(|&v| if v > 0.0 { v } else { slope * v })
                .collect(),
        );
        self.push(Op::LeakyRelu(slope), vec![x], out)
    }

    pub fn concat(&mut self, a: VarId, b: VarId, axis: usize) -> VarId {
        let (va, vb) = (self.value(a), self.value(b));
        let out = match axis {
            0 => {
                assert_eq!(va.cols, vb.cols, "concat axis 0 needs equal widths");
                let mut data = Vec::with_capacity(va.len() + vb.len());
                data.extend_from_slice(&va.data);
                data.extend_from_slice(&vb.data);
                Tensor::from_vec(va.rows + vb.rows, va.cols, data)
            }
            1 => {
                assert_eq!(va.rows, vb.rows, "concat axis 1 needs equal heights");
                let cols = va.cols + vb.cols;
                let mut data = Vec::with_capacity(va.rows * cols);
                for r in 0..va.rows {
                    data.extend_from_slice(va.row(r));
                    data.extend_from_slice(vb.row(r));
                }
                Tensor::from_vec(va.rows, cols, data)
            }
            _ => panic!("concat axis must be 0 or 1"),
        };
        self.push(Op::Concat { axis }, vec![a, b], out)
    }

    pub fn slice_cols(&mut self, x: VarId, start: usize, end: usize) -> VarId {
        let vx = self.value(x);
        assert!(start < end && end <= vx.cols, "slice out of bounds");
        let mut data = Vec::with_capacity(vx.rows * (end - start));
        for r in 0..vx.rows {
            data.extend_from_slice(&vx.row(r)[start..end]);
        }
        let out = Tensor::from_vec(vx.rows, end - start, data);
        self.push(Op::SliceCols { start }, vec![x], out)
    }

    pub fn sum_rows(&mut self, x: VarId) -> VarId {
        let vx = self.value(x);
        let mut out = Tensor::zeros(1, vx.cols);
        for r in 0..vx.rows {
            for (o, v) in out.data.iter_mut().zip(vx.row(r)) {
                *o += v;
            }
        }
        self.push(Op::SumRows, vec![x], out)
    }

    pub fn sum_all(&mut self, x: VarId) -> VarId {
        let vx = self.value(x);
        let total: f64 = vx.data.iter().sum();
        self.push(Op::SumAll, vec![x], Tensor::scalar(total))
    }

    /// Row-wise softmax over entries marked valid in `mask`; masked entries
    /// are exactly zero in the output. Rows with no valid entry come out
    /// all-zero (the defined empty-attention convention).
    pub fn masked_softmax(&mut self, x: VarId, mask: Mask) -> VarId {
        let vx = self.value(x);
        assert_eq!((mask.rows, mask.cols), vx.shape(), "mask shape differs");
        let mut out = Tensor::zeros(vx.rows, vx.cols);
        for r in 0..vx.rows {
            let row = vx.row(r);
            let valid = &mask.valid[r * mask.cols..(r + 1) * mask.cols];
            let mut max = f64::NEG_INFINITY;
            for (v, &ok) in row.iter().zip(valid) {
                if ok && *v > max {
                    max = *v;
                }
            }
            if max == f64::NEG_INFINITY {
                continue; // empty row stays zero
            }
            let orow = out.row_mut(r);
            let mut denom = 0.0;
            for (j, (&v, &ok)) in row.iter().zip(valid).enumerate() {
                if ok {
                    let e = (v - max).exp();
                    orow[j] = e;
                    denom += e;
                }
            }
            for o in orow.iter_mut() {
                *o /= denom;
            }
        }
        self.push(Op::MaskedSoftmax(mask), vec![x], out)
    }

    /// Sum of squared differences over all entries; scalar output.
    pub fn squared_error(&mut self, a: VarId, b: VarId) -> VarId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "squared_error shapes differ");
        let total: f64 = va
            .data
            .iter()
            .zip(&vb.data)
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        self.push(Op::SquaredError, vec![a, b], Tensor::scalar(total))
    }

    /// Numerically stable binary cross-entropy on logits, summed over all
    /// entries: `max(x,0) - x*z + ln(1 + exp(-|x|))`.
    pub fn bce_with_logits(&mut self, logits: VarId, labels: VarId) -> VarId {
        let (vx, vz) = (self.value(logits), self.value(labels));
        assert_eq!(vx.shape(), vz.shape(), "bce shapes differ");
        let total: f64 = vx
            .data
            .iter()
            .zip(&vz.data)
            .map(|(&x, &z)| x.max(0.0) - x * z + (-x.abs()).exp().ln_1p())
            .sum();
        self.push(
            Op::BceWithLogits,
            vec![logits, labels],
            Tensor::scalar(total),
        )
    }

    /// Rows of `x` re-addressed by `idx` (rows may repeat).
    pub fn gather_rows(&mut self, x: VarId, idx: &[usize]) -> VarId {
        let vx = self.value(x);
        let mut data = Vec::with_capacity(idx.len() * vx.cols);
        for &i in idx {
            data.extend_from_slice(vx.row(i));
        }
        let out = Tensor::from_vec(idx.len(), vx.cols, data);
        self.push(Op::GatherRows(idx.to_vec()), vec![x], out)
    }

    /// Scatter-add rows of `x` into a fresh `(rows, x.cols)` tensor:
    /// `out[idx[e]] += x[e]`.
    pub fn scatter_add_rows(&mut self, x: VarId, idx: &[usize], rows: usize) -> VarId {
        let vx = self.value(x);
        assert_eq!(idx.len(), vx.rows, "one target row per input row");
        let mut out = Tensor::zeros(rows, vx.cols);
        for (e, &t) in idx.iter().enumerate() {
            let src = vx.row(e);
            let dst = &mut out.data[t * vx.cols..(t + 1) * vx.cols];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        self.push(Op::ScatterAddRows { idx: idx.to_vec() }, vec![x], out)
    }

    /// Attention contraction: with `alpha` of shape `(n, n)` and `u` of shape
    /// `(n*n, f)` laid out pair-major (`i*n + j`), returns `(n, f)` with
    /// `out[i] = sum_j alpha[i,j] * u[i*n+j]`.
    pub fn pair_weighted_sum(&mut self, alpha: VarId, u: VarId) -> VarId {
        let (va, vu) = (self.value(alpha), self.value(u));
        let n = va.rows;
        assert_eq!(va.cols, n, "alpha must be square");
        assert_eq!(vu.rows, n * n, "u must have n*n rows");
        let f = vu.cols;
        let mut out = Tensor::zeros(n, f);
        for i in 0..n {
            let arow = va.row(i);
            let orow = &mut out.data[i * f..(i + 1) * f];
            for (j, &w) in arow.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let urow = &vu.data[(i * n + j) * f..(i * n + j + 1) * f];
                for (o, uv) in orow.iter_mut().zip(urow) {
                    *o += w * uv;
                }
            }
        }
        self.push(Op::PairWeightedSum, vec![alpha, u], out)
    }

    pub fn reshape(&mut self, x: VarId, rows: usize, cols: usize) -> VarId {
        let vx = self.value(x);
        assert_eq!(vx.len(), rows * cols, "reshape must preserve length");
        let out = Tensor::from_vec(rows, cols, vx.data.clone());
        self.push(Op::Reshape, vec![x], out)
    }

    /// Row-wise standardization `(x - mean) / sqrt(var + eps)`, no affine.
    pub fn layer_norm(&mut self, x: VarId, eps: f64) -> VarId {
        let vx = self.value(x);
        let c = vx.cols as f64;
        let mut out = Tensor::zeros(vx.rows, vx.cols);
        for r in 0..vx.rows {
            let row = vx.row(r);
            let mean = row.iter().sum::<f64>() / c;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
            let inv = 1.0 / (var + eps).sqrt();
            for (o, &v) in out.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
        }
        self.push(Op::LayerNorm(eps), vec![x], out)
    }

    /// Reverse pass from a scalar loss. Returns gradients for every node
    /// reachable from a `requires_grad` leaf.
    pub fn backward(&self, loss: VarId) -> Result<Gradients, TapeError> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(TapeError::NonScalarLoss(lv.rows, lv.cols));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            if grads[id].is_none() || !self.nodes[id].requires_grad {
                continue;
            }
            let g = grads[id].take().unwrap();
            self.backward_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: VarId, delta: Tensor) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(g) => {
                debug_assert_eq!(g.shape(), delta.shape());
                for (a, b) in g.data.iter_mut().zip(&delta.data) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn backward_node(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[id];
        let ins = &node.inputs;
        match &node.op {
            Op::Leaf => {}
            Op::Matmul => {
                let (a, b) = (ins[0], ins[1]);
                if self.nodes[a.0].requires_grad {
                    let mut da = Tensor::zeros(self.value(a).rows, self.value(a).cols);
                    matmul_a_bt_acc(g, self.value(b), &mut da);
                    self.accumulate(grads, a, da);
                }
                if self.nodes[b.0].requires_grad {
                    let mut db = Tensor::zeros(self.value(b).rows, self.value(b).cols);
                    matmul_at_b_acc(self.value(a), g, &mut db);
                    self.accumulate(grads, b, db);
                }
            }
            Op::Add => {
                self.accumulate(grads, ins[0], g.clone());
                self.accumulate(grads, ins[1], g.clone());
            }
            Op::AddBias => {
                self.accumulate(grads, ins[0], g.clone());
                if self.nodes[ins[1].0].requires_grad {
                    let mut db = Tensor::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (d, v) in db.data.iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    self.accumulate(grads, ins[1], db);
                }
            }
            Op::ScalarMul(c) => {
                let dx = Tensor::from_vec(g.rows, g.cols, g.data.iter().map(|v| v * c).collect());
                self.accumulate(grads, ins[0], dx);
            }
            Op::Mul => {
                let (a, b) = (ins[0], ins[1]);
                if self.nodes[a.0].requires_grad {
                    let vb = self.value(b);
                    let da = Tensor::from_vec(
                        g.rows,
                        g.cols,
                        g.data.iter().zip(&vb.data).map(|(x, y)| x * y).collect(),
                    );
                    self.accumulate(grads, a, da);
                }
                if self.nodes[b.0].requires_grad {
                    let va = self.value(a);
                    let db = Tensor::from_vec(
                        g.rows,
                        g.cols,
                        g.data.iter().zip(&va.data).map(|(x, y)| x * y).collect(),
                    );
                    self.accumulate(grads, b, db);
                }
            }
            Op::Relu => {
                let y = &node.value;
                let dx = Tensor::from_vec(
                    g.rows,
                    g.cols,
                    g.data
                        .iter()
                        .zip(&y.data)
                        .map(|(&gv, &yv)| if yv > 0.0 { gv } else { 0.0 })
                        .collect(),
                );
                self.accumulate(grads, ins[0], dx);
            }
            Op::LeakyRelu(slope) => {
                let vx = self.value(ins[0]);
                let dx = Tensor::from_vec(
                    g.rows,
                    g.cols,
                    g.data
                        .iter()
                        .zip(&vx.data)
                        .map(|(&gv, &xv)| if xv > 0.0 { gv } else { slope * gv })
                        .collect(),
                );
                self.accumulate(grads, ins[0], dx);
            }
            Op::Concat { axis } => {
                let (a, b) = (ins[0], ins[1]);
                let va = self.value(a);
                if *axis == 0 {
                    if self.nodes[a.0].requires_grad {
                        let da = Tensor::from_vec(va.rows, va.cols, g.data[..va.len()].to_vec());
                        self.accumulate(grads, a, da);
                    }
                    if self.nodes[b.0].requires_grad {
                        let vb = self.value(b);
                        let db = Tensor::from_vec(vb.rows, vb.cols, g.data[va.len()..].to_vec());
                        self.accumulate(grads, b, db);
                    }
                } else {
                    let vb = self.value(b);
                    if self.nodes[a.0].requires_grad {
                        let mut da = Tensor::zeros(va.rows, va.cols);
                        for r in 0..va.rows {
                            da.row_mut(r).copy_from_slice(&g.row(r)[..va.cols]);
                        }
                        self.accumulate(grads, a, da);
                    }
                    if self.nodes[b.0].requires_grad {
                        let mut db = Tensor::zeros(vb.rows, vb.cols);
                        for r in 0..vb.rows {
                            db.row_mut(r).copy_from_slice(&g.row(r)[va.cols..]);
                        }
                        self.accumulate(grads, b, db);
                    }
                }
            }
            Op::SliceCols { start } => {
                let vx = self.value(ins[0]);
                let mut dx = Tensor::zeros(vx.rows, vx.cols);
                for r in 0..vx.rows {
                    dx.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                }
                self.accumulate(grads, ins[0], dx);
            }
            Op::SumRows => {
                let vx = self.value(ins[0]);
                let mut dx = Tensor::zeros(vx.rows, vx.cols);
                for r in 0..vx.rows {
                    dx.row_mut(r).copy_from_slice(&g.data);
                }
                self.accumulate(grads, ins[0], dx);
            }
            Op::SumAll => {
                let vx = self.value(ins[0]);
                let gv = g.item();
                let dx = Tensor::from_vec(vx.rows, vx.cols, vec![gv; vx.len()]);
                self.accumulate(grads, ins[0], dx);
            }
            Op::MaskedSoftmax(mask) => {
                let y = &node.value;
                let mut dx = Tensor::zeros(y.rows, y.cols);
                for r in 0..y.rows {
                    let yrow = y.row(r);
                    let grow = g.row(r);
                    let valid = &mask.valid[r * mask.cols..(r + 1) * mask.cols];
                    let dot: f64 = yrow.iter().zip(grow).map(|(yv, gv)| yv * gv).sum();
                    for (j, d) in dx.row_mut(r).iter_mut().enumerate() {
                        if valid[j] {
                            *d = yrow[j] * (grow[j] - dot);
                        }
                    }
                }
                self.accumulate(grads, ins[0], dx);
            }
            Op::SquaredError => {
                let (a, b) = (ins[0], ins[1]);
                let (va, vb) = (self.value(a), self.value(b));
                let gv = g.item();
                if self.nodes[a.0].requires_grad {
                    let da = Tensor::from_vec(
                        va.rows,
                        va.cols,
                        va.data
                            .iter()
                            .zip(&vb.data)
                            .map(|(x, y)| 2.0 * (x - y) * gv)
                            .collect(),
                    );
                    self.accumulate(grads, a, da);
                }
                if self.nodes[b.0].requires_grad {
                    let db = Tensor::from_vec(
                        vb.rows,
                        vb.cols,
                        va.data
                            .iter()
                            .zip(&vb.data)
                            .map(|(x, y)| -2.0 * (x - y) * gv)
                            .collect(),
                    );
                    self.accumulate(grads, b, db);
                }
            }
            Op::BceWithLogits => {
                let (x, z) = (ins[0], ins[1]);
                let (vx, vz) = (self.value(x), self.value(z));
                let gv = g.item();
                if self.nodes[x.0].requires_grad {
                    let dx = Tensor::from_vec(
                        vx.rows,
                        vx.cols,
                        vx.data
                            .iter()
                            .zip(&vz.data)
                            .map(|(&xv, &zv)| {
                                let sig = 1.0 / (1.0 + (-xv).exp());
                                (sig - zv) * gv
                            })
                            .collect(),
                    );
                    self.accumulate(grads, x, dx);
                }
                if self.nodes[z.0].requires_grad {
                    let dz = Tensor::from_vec(
                        vz.rows,
                        vz.cols,
                        vx.data.iter().map(|&xv| -xv * gv).collect(),
                    );
                    self.accumulate(grads, z, dz);
                }
            }
            Op::GatherRows(idx) => {
                let vx = self.value(ins[0]);
                let mut dx = Tensor::zeros(vx.rows, vx.cols);
                for (e, &i) in idx.iter().enumerate() {
                    let src = g.row(e);
                    let dst = &mut dx.data[i * vx.cols..(i + 1) * vx.cols];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
                self.accumulate(grads, ins[0], dx);
            }
            Op::ScatterAddRows { idx } => {
                let vx = self.value(ins[0]);
                let mut dx = Tensor::zeros(vx.rows, vx.cols);
                for (e, &t) in idx.iter().enumerate() {
                    dx.row_mut(e).copy_from_slice(g.row(t));
                }
                self.accumulate(grads, ins[0], dx);
            }
            Op::PairWeightedSum => {
                let (a, u) = (ins[0], ins[1]);
                let va = self.value(a);
                let vu = self.value(u);
                let n = va.rows;
                let f = vu.cols;
                if self.nodes[a.0].requires_grad {
                    let mut da = Tensor::zeros(n, n);
                    for i in 0..n {
                        let grow = g.row(i);
                        for j in 0..n {
                            let urow = vu.row(i * n + j);
                            let mut acc = 0.0;
                            for (gv, uv) in grow.iter().zip(urow) {
                                acc += gv * uv;
                            }
                            da.set(i, j, acc);
                        }
                    }
                    self.accumulate(grads, a, da);
                }
                if self.nodes[u.0].requires_grad {
                    let mut du = Tensor::zeros(n * n, f);
                    for i in 0..n {
                        let grow = g.row(i);
                        let arow = va.row(i);
                        for (j, &w) in arow.iter().enumerate() {
                            if w == 0.0 {
                                continue;
                            }
                            let drow = &mut du.data[(i * n + j) * f..(i * n + j + 1) * f];
                            for (d, gv) in drow.iter_mut().zip(grow) {
                                *d += w * gv;
                            }
                        }
                    }
                    self.accumulate(grads, u, du);
                }
            }
            Op::Reshape => {
                let vx = self.value(ins[0]);
                let dx = Tensor::from_vec(vx.rows, vx.cols, g.data.clone());
                self.accumulate(grads, ins[0], dx);
            }
            Op::LayerNorm(eps) => {
                let vx = self.value(ins[0]);
                let y = &node.value;
                let c = vx.cols as f64;
                let mut dx = Tensor::zeros(vx.rows, vx.cols);
                for r in 0..vx.rows {
                    let row = vx.row(r);
                    let mean = row.iter().sum::<f64>() / c;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
                    let inv = 1.0 / (var + eps).sqrt();
                    let yrow = y.row(r);
                    let grow = g.row(r);
                    let gmean = grow.iter().sum::<f64>() / c;
                    let gydot: f64 = grow.iter().zip(yrow).map(|(gv, yv)| gv * yv).sum::<f64>() / c;
                    for (j, d) in dx.row_mut(r).iter_mut().enumerate() {
                        *d = inv * (grow[j] - gmean - yrow[j] * gydot);
                    }
                }
                self.accumulate(grads, ins[0], dx);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masked_softmax_equal_scores() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(1, 2, vec![0.7, 0.7]), false);
        let mask = Mask::new(1, 2, vec![true, true]);
        let y = tape.masked_softmax(x, mask);
        assert_eq!(tape.value(y).data, vec![0.5, 0.5]);
    }

    #[test]
    fn masked_softmax_single_valid_entry() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(1, 3, vec![5.0, -1.0, 2.0]), false);
        let mask = Mask::new(1, 3, vec![false, true, false]);
        let y = tape.masked_softmax(x, mask);
        assert_eq!(tape.value(y).data, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn masked_softmax_empty_row_is_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(1, 2, vec![3.0, 4.0]), false);
        let mask = Mask::new(1, 2, vec![false, false]);
        let y = tape.masked_softmax(x, mask);
        assert_eq!(tape.value(y).data, vec![0.0, 0.0]);
        assert_eq!(mask_empty(1, 2), vec![0]);
    }

    fn mask_empty(rows: usize, cols: usize) -> Vec<usize> {
        Mask::new(rows, cols, vec![false; rows * cols]).empty_rows()
    }

    #[test]
    fn masked_softmax_matches_direct_exp_sum() {
        // brute-force oracle on random 5-entry rows
        let mut rng = crate::rng::SplitMix64::new(11);
        for _ in 0..50 {
            let vals: Vec<f64> = (0..5).map(|_| rng.next_range(-4.0, 4.0)).collect();
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::from_vec(1, 5, vals.clone()), false);
            let mask = Mask::new(1, 5, vec![true; 5]);
            let y = tape.masked_softmax(x, mask);
            let denom: f64 = vals.iter().map(|v| v.exp()).sum();
            for (got, v) in tape.value(y).data.iter().zip(&vals) {
                assert!((got - v.exp() / denom).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_loss_gradient_is_input() {
        // loss = sum(W @ x) with x fixed: dW = broadcast of x along rows
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::from_vec(2, 3, vec![0.1; 6]), true);
        let x = tape.constant(Tensor::from_vec(3, 1, vec![1.0, 2.0, 3.0]));
        let y = tape.matmul(w, x);
        let loss = tape.sum_all(y);
        let grads = tape.backward(loss).unwrap();
        let gw = grads.get(w).unwrap();
        assert_eq!(gw.data, vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        assert!(grads.get(x).is_none());
    }

    #[test]
    fn duplicated_subexpression_accumulates() {
        // y = x*x reused twice: loss = sum(y + y) => dx = 4x
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(1, 3, vec![1.0, -2.0, 0.5]), true);
        let y = tape.mul(x, x);
        let s = tape.add(y, y);
        let loss = tape.sum_all(s);
        let grads = tape.backward(loss).unwrap();
        let gx = grads.get(x).unwrap();
        assert_eq!(gx.data, vec![4.0, -8.0, 2.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(1, 2, vec![1.0, 2.0]), true);
        assert!(matches!(
            tape.backward(x),
            Err(TapeError::NonScalarLoss(1, 2))
        ));
    }
}
