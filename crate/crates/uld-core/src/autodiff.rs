//! Minimal reverse-mode differentiation over dense row-major matrices.
//!
//! A [`Tape`] records primitive operations as they execute; [`Tape::backward`]
//! replays them in reverse, accumulating gradients in tape order so repeated
//! runs produce bitwise-identical results. The primitive set is exactly what
//! the tiny causal language model needs (matmul, gather-rows, row-softmax,
//! rms-normalize, gelu, causal masking, column slicing) plus a few
//! scalar-reduction ops used by the verification harness.
//!
//! The engine is generic over the float type: the model trains in `f32`,
//! the finite-difference checks run in `f64`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::{Error, Result};

fn cst<T: Float>(x: f64) -> T {
    T::from(x).expect("constant representable in float type")
}

const RMS_EPS: f64 = 1e-6;
/// Large negative constant used for causal masking. Finite so that masked
/// scores never produce NaN via inf - inf, yet extreme enough that softmax
/// maps them to exactly zero.
const MASK_VALUE: f64 = -1e30;

/// A dense row-major matrix of floats. Scalars are `1 x 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Float> Tensor<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::parameter(format!(
                "tensor dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::parameter(format!(
                "tensor {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn scalar(x: T) -> Self {
        Tensor {
            rows: 1,
            cols: 1,
            data: vec![x],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op<T> {
    Leaf,
    Matmul(NodeId, NodeId),
    /// `A * B^T`; lets the model reuse the embedding table as the output
    /// projection without materializing a transpose.
    MatmulTransB(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    GatherRows(NodeId, Vec<usize>),
    RowSoftmax(NodeId),
    RmsNorm {
        x: NodeId,
        gain: NodeId,
        inv_rms: Vec<T>,
    },
    Gelu(NodeId),
    Reshape(NodeId),
    CausalMaskAdd(NodeId),
    SliceCols {
        x: NodeId,
        start: usize,
    },
    ConcatCols(Vec<NodeId>),
    SumAll(NodeId),
    Ln(NodeId),
}

struct Node<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// An append-only record of primitive operations in execution order.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<T>, op: Op<T>) -> NodeId {
        let requires_grad = match &op {
            Op::Leaf => false, // set by `leaf`
            Op::Matmul(a, b) | Op::MatmulTransB(a, b) | Op::Add(a, b) | Op::Mul(a, b) => {
                self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad
            }
            Op::RmsNorm { x, gain, .. } => {
                self.nodes[x.0].requires_grad || self.nodes[gain.0].requires_grad
            }
            Op::ConcatCols(parts) => parts.iter().any(|p| self.nodes[p.0].requires_grad),
            Op::Scale(a, _)
            | Op::GatherRows(a, _)
            | Op::RowSoftmax(a)
            | Op::Gelu(a)
            | Op::Reshape(a)
            | Op::CausalMaskAdd(a)
            | Op::SliceCols { x: a, .. }
            | Op::SumAll(a)
            | Op::Ln(a) => self.nodes[a.0].requires_grad,
        };
        self.nodes.push(Node {
            rows,
            cols,
            data,
            grad: None,
            requires_grad,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Registers an input tensor.
    pub fn leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> NodeId {
        let id = self.push(t.rows, t.cols, t.data, Op::Leaf);
        self.nodes[id.0].requires_grad = requires_grad;
        id
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, id: NodeId) -> &[T] {
        &self.nodes[id.0].data
    }

    /// Gradient from the most recent backward pass, if the node required
    /// one.
    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.nodes[id.0].grad.as_deref()
    }

    fn dims(&self, id: NodeId) -> (usize, usize, &[T]) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols, &n.data)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, ka, _) = self.dims(a);
        let (kb, n, _) = self.dims(b);
        if ka != kb {
            return Err(Error::parameter(format!(
                "matmul shape mismatch: {m}x{ka} * {kb}x{n}"
            )));
        }
        let mut out = vec![T::zero(); m * n];
        {
            let da = &self.nodes[a.0].data;
            let db = &self.nodes[b.0].data;
            for i in 0..m {
                for k in 0..ka {
                    let aik = da[i * ka + k];
                    if aik == T::zero() {
                        continue;
                    }
                    let brow = &db[k * n..(k + 1) * n];
                    let orow = &mut out[i * n..(i + 1) * n];
                    for j in 0..n {
                        orow[j] = orow[j] + aik * brow[j];
                    }
                }
            }
        }
        Ok(self.push(m, n, out, Op::Matmul(a, b)))
    }

    /// `A * B^T` where `A` is `m x k` and `B` is `n x k`.
    pub fn matmul_trans_b(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, ka, _) = self.dims(a);
        let (n, kb, _) = self.dims(b);
        if ka != kb {
            return Err(Error::parameter(format!(
                "matmul_trans_b shape mismatch: {m}x{ka} * ({n}x{kb})^T"
            )));
        }
        let mut out = vec![T::zero(); m * n];
        {
            let da = &self.nodes[a.0].data;
            let db = &self.nodes[b.0].data;
            for i in 0..m {
                let arow = &da[i * ka..(i + 1) * ka];
                for j in 0..n {
                    let brow = &db[j * ka..(j + 1) * ka];
                    let mut acc = T::zero();
                    for k in 0..ka {
                        acc = acc + arow[k] * brow[k];
                    }
                    out[i * n + j] = acc;
                }
            }
        }
        Ok(self.push(m, n, out, Op::MatmulTransB(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ra, ca, _) = self.dims(a);
        let (rb, cb, _) = self.dims(b);
        if (ra, ca) != (rb, cb) {
            return Err(Error::parameter(format!(
                "add shape mismatch: {ra}x{ca} vs {rb}x{cb}"
            )));
        }
        let data: Vec<T> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x + y)
            .collect();
        Ok(self.push(ra, ca, data, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ra, ca, _) = self.dims(a);
        let (rb, cb, _) = self.dims(b);
        if (ra, ca) != (rb, cb) {
            return Err(Error::parameter(format!(
                "mul shape mismatch: {ra}x{ca} vs {rb}x{cb}"
            )));
        }
        let data: Vec<T> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x * y)
            .collect();
        Ok(self.push(ra, ca, data, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, factor: T) -> NodeId {
        let (r, c, data) = self.dims(a);
        let data: Vec<T> = data.iter().map(|&x| x * factor).collect();
        self.push(r, c, data, Op::Scale(a, factor))
    }

    /// Embedding lookup: row `i` of the output is `table[ids[i]]`.
    pub fn gather_rows(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let (rows, cols, data) = self.dims(table);
        if ids.is_empty() {
            return Err(Error::parameter("gather_rows needs at least one index"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::parameter(format!(
                "gather_rows index {bad} out of range for {rows} rows"
            )));
        }
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            out.extend_from_slice(&data[i * cols..(i + 1) * cols]);
        }
        Ok(self.push(ids.len(), cols, out, Op::GatherRows(table, ids.to_vec())))
    }

    /// Max-subtracted softmax applied to every row independently.
    pub fn row_softmax(&mut self, a: NodeId) -> NodeId {
        let (r, c, data) = self.dims(a);
        let mut out = Vec::with_capacity(r * c);
        for row in data.chunks(c) {
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
            let sum = exps.iter().fold(T::zero(), |s, &v| s + v);
            out.extend(exps.into_iter().map(|v| v / sum));
        }
        self.push(r, c, out, Op::RowSoftmax(a))
    }

    /// Root-mean-square normalization per row with a learned per-column
    /// gain: `y = x / rms(x_row) * gain`.
    pub fn rms_norm(&mut self, x: NodeId, gain: NodeId) -> Result<NodeId> {
        let (r, c, _) = self.dims(x);
        let (gr, gc, _) = self.dims(gain);
        if gr != 1 || gc != c {
            return Err(Error::parameter(format!(
                "rms_norm gain must be 1x{c}, got {gr}x{gc}"
            )));
        }
        let eps = cst::<T>(RMS_EPS);
        let d = cst::<T>(c as f64);
        let mut inv_rms = Vec::with_capacity(r);
        let mut out = Vec::with_capacity(r * c);
        {
            let xd = &self.nodes[x.0].data;
            let gd = &self.nodes[gain.0].data;
            for row in xd.chunks(c) {
                let mean_sq = row.iter().fold(T::zero(), |s, &v| s + v * v) / d;
                let inv = (mean_sq + eps).sqrt().recip();
                inv_rms.push(inv);
                for (j, &v) in row.iter().enumerate() {
                    out.push(v * inv * gd[j]);
                }
            }
        }
        Ok(self.push(r, c, out, Op::RmsNorm { x, gain, inv_rms }))
    }

    /// Gaussian error linear unit, tanh form.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let (r, c, data) = self.dims(a);
        let data: Vec<T> = data.iter().map(|&x| gelu_value(x)).collect();
        self.push(r, c, data, Op::Gelu(a))
    }

    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        let (r, c, data) = self.dims(a);
        if rows == 0 || cols == 0 || r * c != rows * cols {
            return Err(Error::parameter(format!(
                "cannot reshape {r}x{c} into {rows}x{cols}"
            )));
        }
        let data = data.to_vec();
        Ok(self.push(rows, cols, data, Op::Reshape(a)))
    }

    /// Adds a large negative constant above the diagonal so that a
    /// following row-softmax zeroes attention to future positions.
    pub fn causal_mask_add(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c, data) = self.dims(a);
        if r != c {
            return Err(Error::parameter(format!(
                "causal mask needs a square score matrix, got {r}x{c}"
            )));
        }
        let mask = cst::<T>(MASK_VALUE);
        let mut out = data.to_vec();
        for i in 0..r {
            for j in (i + 1)..c {
                out[i * c + j] = out[i * c + j] + mask;
            }
        }
        Ok(self.push(r, c, out, Op::CausalMaskAdd(a)))
    }

    /// A contiguous column window, e.g. one attention head of a packed
    /// projection.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (r, c, data) = self.dims(x);
        if len == 0 || start + len > c {
            return Err(Error::parameter(format!(
                "column slice {start}..{} out of range for width {c}",
                start + len
            )));
        }
        let mut out = Vec::with_capacity(r * len);
        for row in data.chunks(c) {
            out.extend_from_slice(&row[start..start + len]);
        }
        Ok(self.push(r, len, out, Op::SliceCols { x, start }))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::parameter("concat_cols needs at least one part"));
        }
        let (rows, _, _) = self.dims(parts[0]);
        let mut total_cols = 0;
        for &p in parts {
            let (r, c, _) = self.dims(p);
            if r != rows {
                return Err(Error::parameter(format!(
                    "concat_cols row mismatch: {rows} vs {r}"
                )));
            }
            total_cols += c;
        }
        let mut out = Vec::with_capacity(rows * total_cols);
        for i in 0..rows {
            for &p in parts {
                let (_, c, data) = self.dims(p);
                out.extend_from_slice(&data[i * c..(i + 1) * c]);
            }
        }
        Ok(self.push(rows, total_cols, out, Op::ConcatCols(parts.to_vec())))
    }

    /// Sum of every entry, as a `1 x 1` tensor.
    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let (_, _, data) = self.dims(a);
        let total = data.iter().fold(T::zero(), |s, &v| s + v);
        self.push(1, 1, vec![total], Op::SumAll(a))
    }

    /// Elementwise natural logarithm. The caller guarantees positivity
    /// (softmax output in practice).
    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let (r, c, data) = self.dims(a);
        let data: Vec<T> = data.iter().map(|&x| x.ln()).collect();
        self.push(r, c, data, Op::Ln(a))
    }

    /// Reverse pass from a scalar loss, seeding with 1.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(Error::parameter(format!(
                "backward needs a scalar loss, got {r}x{c}"
            )));
        }
        self.backward_with_seed(loss, &[T::one()])
    }

    /// Reverse pass seeding an arbitrary node with an upstream gradient;
    /// used to inject analytically computed loss gradients at the logits.
    pub fn backward_with_seed(&mut self, node: NodeId, seed: &[T]) -> Result<()> {
        {
            let n = &self.nodes[node.0];
            if seed.len() != n.rows * n.cols {
                return Err(Error::parameter(format!(
                    "seed length {} does not match node size {}",
                    seed.len(),
                    n.rows * n.cols
                )));
            }
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.accumulate(node, seed.to_vec());

        for idx in (0..=node.0).rev() {
            let Some(grad) = self.nodes[idx].grad.take() else {
                continue;
            };
            self.propagate(idx, &grad);
            self.nodes[idx].grad = Some(grad);
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, contribution: Vec<T>) {
        let node = &mut self.nodes[id.0];
        match &mut node.grad {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(&contribution) {
                    *gi = *gi + *ci;
                }
            }
            None => node.grad = Some(contribution),
        }
    }

    fn add_grad(&mut self, id: NodeId, contribution: Vec<T>) {
        if self.nodes[id.0].requires_grad {
            self.accumulate(id, contribution);
        }
    }

    fn propagate(&mut self, idx: usize, grad: &[T]) {
        if !self.nodes[idx].requires_grad {
            return;
        }
        let op = core::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (m, k, da) = self.dims(*a);
                let (_, n, db) = self.dims(*b);
                let (da, db) = (da.to_vec(), db.to_vec());
                if self.nodes[a.0].requires_grad {
                    let mut ga = vec![T::zero(); m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let g = grad[i * n + j];
                            if g == T::zero() {
                                continue;
                            }
                            for kk in 0..k {
                                ga[i * k + kk] = ga[i * k + kk] + g * db[kk * n + j];
                            }
                        }
                    }
                    self.add_grad(*a, ga);
                }
                if self.nodes[b.0].requires_grad {
                    let mut gb = vec![T::zero(); k * n];
                    for i in 0..m {
                        for kk in 0..k {
                            let a_ik = da[i * k + kk];
                            if a_ik == T::zero() {
                                continue;
                            }
                            for j in 0..n {
                                gb[kk * n + j] = gb[kk * n + j] + a_ik * grad[i * n + j];
                            }
                        }
                    }
                    self.add_grad(*b, gb);
                }
            }
            Op::MatmulTransB(a, b) => {
                let (m, k, da) = self.dims(*a);
                let (n, _, db) = self.dims(*b);
                let (da, db) = (da.to_vec(), db.to_vec());
                if self.nodes[a.0].requires_grad {
                    let mut ga = vec![T::zero(); m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let g = grad[i * n + j];
                            if g == T::zero() {
                                continue;
                            }
                            for kk in 0..k {
                                ga[i * k + kk] = ga[i * k + kk] + g * db[j * k + kk];
                            }
                        }
                    }
                    self.add_grad(*a, ga);
                }
                if self.nodes[b.0].requires_grad {
                    let mut gb = vec![T::zero(); n * k];
                    for i in 0..m {
                        for j in 0..n {
                            let g = grad[i * n + j];
                            if g == T::zero() {
                                continue;
                            }
                            for kk in 0..k {
                                gb[j * k + kk] = gb[j * k + kk] + g * da[i * k + kk];
                            }
                        }
                    }
                    self.add_grad(*b, gb);
                }
            }
            Op::Add(a, b) => {
                self.add_grad(*a, grad.to_vec());
                self.add_grad(*b, grad.to_vec());
            }
            Op::Mul(a, b) => {
                let da = self.nodes[a.0].data.clone();
                let db = self.nodes[b.0].data.clone();
                if self.nodes[a.0].requires_grad {
                    let ga: Vec<T> = grad.iter().zip(&db).map(|(&g, &y)| g * y).collect();
                    self.add_grad(*a, ga);
                }
                if self.nodes[b.0].requires_grad {
                    let gb: Vec<T> = grad.iter().zip(&da).map(|(&g, &x)| g * x).collect();
                    self.add_grad(*b, gb);
                }
            }
            Op::Scale(a, factor) => {
                let ga: Vec<T> = grad.iter().map(|&g| g * *factor).collect();
                self.add_grad(*a, ga);
            }
            Op::GatherRows(table, ids) => {
                let (rows, cols, _) = self.dims(*table);
                let mut gt = vec![T::zero(); rows * cols];
                for (r, &src) in ids.iter().enumerate() {
                    for c in 0..cols {
                        gt[src * cols + c] = gt[src * cols + c] + grad[r * cols + c];
                    }
                }
                self.add_grad(*table, gt);
            }
            Op::RowSoftmax(a) => {
                let (r, c, _) = self.dims(*a);
                let y = self.nodes[idx].data.clone();
                let mut ga = vec![T::zero(); r * c];
                for i in 0..r {
                    let yrow = &y[i * c..(i + 1) * c];
                    let grow = &grad[i * c..(i + 1) * c];
                    let dot = yrow
                        .iter()
                        .zip(grow)
                        .fold(T::zero(), |s, (&yv, &gv)| s + yv * gv);
                    for j in 0..c {
                        ga[i * c + j] = yrow[j] * (grow[j] - dot);
                    }
                }
                self.add_grad(*a, ga);
            }
            Op::RmsNorm { x, gain, inv_rms } => {
                let (r, c, xd) = self.dims(*x);
                let xd = xd.to_vec();
                let gd = self.nodes[gain.0].data.clone();
                let d = cst::<T>(c as f64);
                if self.nodes[x.0].requires_grad {
                    let mut gx = vec![T::zero(); r * c];
                    for i in 0..r {
                        let inv = inv_rms[i];
                        let xrow = &xd[i * c..(i + 1) * c];
                        let grow = &grad[i * c..(i + 1) * c];
                        let mut dot = T::zero();
                        for j in 0..c {
                            dot = dot + grow[j] * gd[j] * xrow[j];
                        }
                        let shrink = dot * inv * inv / d;
                        for j in 0..c {
                            gx[i * c + j] = inv * (grow[j] * gd[j] - xrow[j] * shrink);
                        }
                    }
                    self.add_grad(*x, gx);
                }
                if self.nodes[gain.0].requires_grad {
                    let mut gg = vec![T::zero(); c];
                    for i in 0..r {
                        let inv = inv_rms[i];
                        for j in 0..c {
                            gg[j] = gg[j] + grad[i * c + j] * xd[i * c + j] * inv;
                        }
                    }
                    self.add_grad(*gain, gg);
                }
            }
            Op::Gelu(a) => {
                let xd = self.nodes[a.0].data.clone();
                let ga: Vec<T> = grad
                    .iter()
                    .zip(&xd)
                    .map(|(&g, &x)| g * gelu_derivative(x))
                    .collect();
                self.add_grad(*a, ga);
            }
            Op::Reshape(a) | Op::CausalMaskAdd(a) => {
                self.add_grad(*a, grad.to_vec());
            }
            Op::SliceCols { x, start } => {
                let (r, c, _) = self.dims(*x);
                let (_, len) = self.shape(NodeId(idx));
                let mut gx = vec![T::zero(); r * c];
                for i in 0..r {
                    for j in 0..len {
                        gx[i * c + start + j] = grad[i * len + j];
                    }
                }
                self.add_grad(*x, gx);
            }
            Op::ConcatCols(parts) => {
                let (rows, total_cols) = self.shape(NodeId(idx));
                let mut offset = 0;
                for &p in parts {
                    let (_, c, _) = self.dims(p);
                    if self.nodes[p.0].requires_grad {
                        let mut gp = vec![T::zero(); rows * c];
                        for i in 0..rows {
                            gp[i * c..(i + 1) * c].copy_from_slice(
                                &grad[i * total_cols + offset..i * total_cols + offset + c],
                            );
                        }
                        self.add_grad(p, gp);
                    }
                    offset += c;
                }
            }
            Op::SumAll(a) => {
                let (r, c, _) = self.dims(*a);
                let ga = vec![grad[0]; r * c];
                self.add_grad(*a, ga);
            }
            Op::Ln(a) => {
                let xd = self.nodes[a.0].data.clone();
                let ga: Vec<T> = grad.iter().zip(&xd).map(|(&g, &x)| g / x).collect();
                self.add_grad(*a, ga);
            }
        }
        self.nodes[idx].op = op;
    }
}

fn gelu_value<T: Float>(x: T) -> T {
    let half = cst::<T>(0.5);
    let c0 = cst::<T>(0.797_884_560_802_865_4); // sqrt(2/pi)
    let c1 = cst::<T>(0.044715);
    let u = c0 * (x + c1 * x * x * x);
    half * x * (T::one() + u.tanh())
}

fn gelu_derivative<T: Float>(x: T) -> T {
    let half = cst::<T>(0.5);
    let c0 = cst::<T>(0.797_884_560_802_865_4);
    let c1 = cst::<T>(0.044715);
    let three = cst::<T>(3.0);
    let u = c0 * (x + c1 * x * x * x);
    let t = u.tanh();
    let sech_sq = T::one() - t * t;
    half * (T::one() + t) + half * x * sech_sq * c0 * (T::one() + three * c1 * x * x)
}

/// Central finite differences of a scalar function, one coordinate at a
/// time.
pub fn central_diff<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        grad.push((up - down) / (2.0 * h));
    }
    grad
}

/// Worst-coordinate relative error between analytic and numeric gradients,
/// floored at 1e-3 in the denominator so near-zero coordinates compare on
/// an absolute scale.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-3))
        .fold(0.0, f64::max)
}

/// Checks a tape-built scalar function's analytic gradient against central
/// finite differences; returns the worst-coordinate relative error.
pub fn grad_check<F>(build: F, x: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, NodeId) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let input = tape.leaf(x.clone(), true);
    let loss = build(&mut tape, input)?;
    let (r, c) = tape.shape(loss);
    if (r, c) != (1, 1) {
        return Err(Error::parameter(format!(
            "grad_check needs a scalar-valued function, got {r}x{c}"
        )));
    }
    tape.backward(loss)?;
    let analytic = tape.grad(input).expect("input requires grad").to_vec();

    let eval = |values: &[f64]| -> f64 {
        let mut t = Tape::new();
        let leaf = t.leaf(
            Tensor::new(x.rows(), x.cols(), values.to_vec()).expect("same shape"),
            false,
        );
        let out = build(&mut t, leaf).expect("function must evaluate at perturbed points");
        t.value(out)[0]
    };
    let numeric = central_diff(eval, x.data(), h);
    Ok(max_rel_err(&analytic, &numeric))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tensor(rows: usize, cols: usize, data: &[f64]) -> Tensor<f64> {
        Tensor::new(rows, cols, data.to_vec()).unwrap()
    }

    fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect();
        Tensor::new(rows, cols, data).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let eye = tape.leaf(tensor(2, 2, &[1.0, 0.0, 0.0, 1.0]), false);
        let x = tape.leaf(tensor(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), false);
        let y = tape.matmul(eye, x).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn softmax_of_zero_rows_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::<f64>::zeros(2, 4), false);
        let y = tape.row_softmax(x);
        for &v in tape.value(y) {
            assert_abs_diff_eq!(v, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn gelu_at_zero_is_zero() {
        assert_eq!(gelu_value(0.0f64), 0.0);
        assert_eq!(gelu_value(0.0f32), 0.0);
    }

    #[test]
    fn square_gradient() {
        // d(x*x)/dx at x = 3 is 6.
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0f64), true);
        let sq = tape.mul(x, x).unwrap();
        tape.backward(sq).unwrap();
        assert_abs_diff_eq!(tape.grad(x).unwrap()[0], 6.0, epsilon = 1e-12);
    }

    #[test]
    fn softmax_cross_entropy_closed_form() {
        // L = -sum(onehot . ln softmax(z)) must have gradient softmax(z) - onehot.
        let logits = [0.3, -1.2, 2.0, 0.5];
        let gold = 2usize;
        let mut tape = Tape::new();
        let z = tape.leaf(tensor(1, 4, &logits), true);
        let p = tape.row_softmax(z);
        let lp = tape.ln(p);
        let mut onehot = [0.0; 4];
        onehot[gold] = 1.0;
        let hot = tape.leaf(tensor(1, 4, &onehot), false);
        let picked = tape.mul(lp, hot).unwrap();
        let summed = tape.sum_all(picked);
        let loss = tape.scale(summed, -1.0);
        tape.backward(loss).unwrap();

        let probs = tape.value(p).to_vec();
        let grad = tape.grad(z).unwrap();
        for k in 0..4 {
            let expected = probs[k] - onehot[k];
            assert_abs_diff_eq!(grad[k], expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn backward_needs_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(tensor(1, 2, &[1.0, 2.0]), true);
        assert!(matches!(tape.backward(x), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn backward_is_bitwise_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_tensor(&mut rng, 3, 4);
        let w = random_tensor(&mut rng, 4, 4);
        let run = || {
            let mut tape = Tape::new();
            let xi = tape.leaf(x.clone(), true);
            let wi = tape.leaf(w.clone(), true);
            let h = tape.matmul(xi, wi).unwrap();
            let a = tape.gelu(h);
            let s = tape.row_softmax(a);
            let l = tape.sum_all(s);
            let l2 = tape.sum_all(a);
            let total = tape.add(l, l2).unwrap();
            tape.backward(total).unwrap();
            (
                tape.grad(xi).unwrap().to_vec(),
                tape.grad(wi).unwrap().to_vec(),
            )
        };
        let (gx1, gw1) = run();
        let (gx2, gw2) = run();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<alloc::vec::Vec<_>>();
        assert_eq!(bits(&gx1), bits(&gx2));
        assert_eq!(bits(&gw1), bits(&gw2));
    }

    #[test]
    fn gradient_accumulation_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_tensor(&mut rng, 2, 3);

        let grad_of = |which: u8| -> alloc::vec::Vec<f64> {
            let mut tape = Tape::new();
            let xi = tape.leaf(x.clone(), true);
            let f = {
                let sq = tape.mul(xi, xi).unwrap();
                tape.sum_all(sq)
            };
            let g = {
                let act = tape.gelu(xi);
                tape.sum_all(act)
            };
            let loss = match which {
                0 => f,
                1 => g,
                _ => tape.add(f, g).unwrap(),
            };
            tape.backward(loss).unwrap();
            tape.grad(xi).unwrap().to_vec()
        };

        let gf = grad_of(0);
        let gg = grad_of(1);
        let gsum = grad_of(2);
        for i in 0..gf.len() {
            assert_abs_diff_eq!(gsum[i], gf[i] + gg[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn quadratic_grad_check_is_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_tensor(&mut rng, 2, 4);
        let err = grad_check(
            |tape, xi| {
                let sq = tape.mul(xi, xi)?;
                Ok(tape.sum_all(sq))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "quadratic check should be near-exact, got {err}");
    }

    #[test]
    fn every_primitive_passes_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        let tol = 1e-5;
        for trial in 0..100 {
            let rows = rng.gen_range(1..5);
            let cols = rng.gen_range(1..5);
            let x = random_tensor(&mut rng, rows, cols);
            let other = random_tensor(&mut rng, rows, cols);
            let weight_cols = rng.gen_range(1..4);
            let weight = random_tensor(&mut rng, cols, weight_cols);
            let gain_data: alloc::vec::Vec<f64> =
                (0..cols).map(|_| rng.gen_range(0.5..1.5)).collect();
            let gain = Tensor::new(1, cols, gain_data).unwrap();
            let ids: alloc::vec::Vec<usize> = (0..rng.gen_range(1..4))
                .map(|_| rng.gen_range(0..rows))
                .collect();
            let square = random_tensor(&mut rng, rows, rows);

            let check = |name: &str, err: f64| {
                assert!(
                    err < tol,
                    "trial {trial}: primitive {name} failed grad check: {err}"
                );
            };

            check(
                "matmul",
                grad_check(
                    |t, xi| {
                        let wi = t.leaf(weight.clone(), false);
                        let y = t.matmul(xi, wi)?;
                        Ok(t.sum_all(y))
                    },
                    &x,
                    h,
                )
                .unwrap(),
            );
            check(
                "matmul_trans_b",
                grad_check(
                    |t, xi| {
                        let oi = t.leaf(other.clone(), false);
                        let y = t.matmul_trans_b(xi, oi)?;
                        Ok(t.sum_all(y))
                    },
                    &x,
                    h,
                )
                .unwrap(),
            );
            check(
                "add_mul",
                grad_check(
                    |t, xi| {
                        let oi = t.leaf(other.clone(), false);
                        let s = t.add(xi, oi)?;
                        let m = t.mul(s, xi)?;
                        Ok(t.sum_all(m))
                    },
                    &x,
                    h,
                )
                .unwrap(),
            );
            check(
                "scale",
                grad_check(
                    |t, xi| {
                        let y = t.scale(xi, -1.7);
                        Ok(t.sum_all(y))
                    },
                    &x,
                    h,
                )
                .unwrap(),
            );
            check(
                "gather_rows",
                grad_check(
                    |t, xi| {
                        let g = t.gather_rows(xi, &ids)?;
                        let sq = t.mul(g, g)?;
                        Ok(t.sum_all(sq))
                    },
                    &x,
                    h,
                )
                .unwrap(),
            );
            check(
                "row_softmax",
                grad_check(
                    |t, xi| {
                        let sm = t.row_softmax(xi);
                        let oi = t.leaf(other.clone(), false);
                        let weighted = t.mul(sm, oi)?;
                        Ok(t.sum_all(weighted))
                    },
                    &x,
                    h,
                )
                .unwrap(),
            );
            check(
                "rms_norm",
                grad_check(
                    |t, xi| {
                        let gi = t.leaf(gain.clone(), false);
                        let y = t.rms_norm(xi, gi)?;
                        let sq = t.mul(y, y)?;
                        Ok(t.sum_all(sq))
                    },
                    &x,
                    h,
                )
                .unwrap(),
            );
            check(
                "gelu",
                grad_check(
                    |t, xi| {
                        let y = t.gelu(xi);
                        Ok(t.sum_all(y))
                    },
                    &x,
                    h,
                )
                .unwrap(),
            );
            check(
                "reshape_slice_concat",
                grad_check(
                    |t, xi| {
                        let (r, c) = t.shape(xi);
                        let flat = t.reshape(xi, 1, r * c)?;
                        let left = t.slice_cols(flat, 0, 1)?;
                        let rest = t.slice_cols(flat, 0, r * c)?;
                        let joined = t.concat_cols(&[left, rest])?;
                        let sq = t.mul(joined, joined)?;
                        Ok(t.sum_all(sq))
                    },
                    &x,
                    h,
                )
                .unwrap(),
            );
            check(
                "causal_mask_softmax",
                grad_check(
                    |t, si| {
                        let masked = t.causal_mask_add(si)?;
                        let att = t.row_softmax(masked);
                        let oi = t.leaf(square.clone(), false);
                        let y = t.matmul(att, oi)?;
                        let sq = t.mul(y, y)?;
                        Ok(t.sum_all(sq))
                    },
                    &square,
                    h,
                )
                .unwrap(),
            );
        }
    }

    #[test]
    fn three_layer_composition_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let x = random_tensor(&mut rng, 3, 6);
            let w1 = random_tensor(&mut rng, 6, 5);
            let w2 = random_tensor(&mut rng, 5, 4);
            let gain: alloc::vec::Vec<f64> = (0..4).map(|_| rng.gen_range(0.5..1.5)).collect();
            let gain = Tensor::new(1, 4, gain).unwrap();
            let err = grad_check(
                |t, xi| {
                    let w1i = t.leaf(w1.clone(), false);
                    let w2i = t.leaf(w2.clone(), false);
                    let gi = t.leaf(gain.clone(), false);
                    let h1 = t.matmul(xi, w1i)?;
                    let a1 = t.gelu(h1);
                    let h2 = t.matmul(a1, w2i)?;
                    let n2 = t.rms_norm(h2, gi)?;
                    let p = t.row_softmax(n2);
                    let lp = t.ln(p);
                    let picked = t.mul(p, lp)?; // negative entropy per row
                    Ok(t.sum_all(picked))
                },
                &x,
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-4, "composition grad check failed: {err}");
        }
    }

    #[test]
    fn causal_mask_zeroes_future_attention() {
        let mut tape = Tape::<f32>::new();
        let scores = tape.leaf(Tensor::<f32>::zeros(3, 3), false);
        let masked = tape.causal_mask_add(scores).unwrap();
        let att = tape.row_softmax(masked);
        let a = tape.value(att);
        assert_eq!(a[0], 1.0);
        assert_eq!(a[1], 0.0);
        assert_eq!(a[2], 0.0);
        assert!((a[3] - 0.5).abs() < 1e-6 && (a[4] - 0.5).abs() < 1e-6);
        assert_eq!(a[5], 0.0);
    }
}
