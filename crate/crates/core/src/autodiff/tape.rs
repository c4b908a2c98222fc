use rand::Rng;

use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Debug)]
enum Op {
    /// Constant or externally seeded input.
    Input,
    Param(ParamId),
    /// Embedding lookup into a parameter table; gradients scatter into rows.
    ParamRows(ParamId, Vec<usize>),
    MatMul(Var, Var),
    Binary(BinaryKind, Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>, usize),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Gather(Var, Vec<usize>),
    Pick(Var, Vec<(usize, usize)>),
    Dropout(Var, Vec<f64>),
    LogSumExp(Var, usize),
    LogSoftmax(Var, usize),
    Sum(Var),
    SliceRows(Var, usize),
    SliceCols(Var, usize, usize),
    Transpose(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Linear record of primitive applications for reverse-mode differentiation.
///
/// A tape is built fresh for every forward pass. Node ids are assigned in
/// push order, so the record is topologically sorted by construction.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn check_rank2(op: &'static str, t: &Tensor) -> Result<()> {
    if t.rank() != 2 {
        return Err(Error::shape(op, &[t.shape()]));
    }
    Ok(())
}

fn broadcast_dim(a: usize, b: usize) -> Option<usize> {
    if a == b {
        Some(a)
    } else if a == 1 {
        Some(b)
    } else if b == 1 {
        Some(a)
    } else {
        None
    }
}

#[inline]
fn bidx(shape: &[usize], r: usize, c: usize) -> usize {
    let rr = if shape[0] == 1 { 0 } else { r };
    let cc = if shape[1] == 1 { 0 } else { c };
    rr * shape[1] + cc
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Stable log-sum-exp of a slice. `values` must be non-empty.
pub fn log_sum_exp_slice(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Cosine similarity between two equal-length vectors.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("cosine_similarity", &[&[a.len()], &[b.len()]]));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm("cosine_similarity"));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Plain dense product of `[m, k] x [k, n]` row-major buffers.
fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// (number of slices, slice length) when reducing a rank-2 shape along `axis`.
fn axis_slices(shape: &[usize], axis: usize) -> (usize, usize) {
    if axis == 0 {
        (shape[1], shape[0])
    } else {
        (shape[0], shape[1])
    }
}

#[inline]
fn axis_index(shape: &[usize], axis: usize, slice: usize, k: usize) -> usize {
    if axis == 0 {
        k * shape[1] + slice
    } else {
        slice * shape[1] + k
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a constant that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, false)
    }

    /// Records an input whose gradient is wanted but which is not a
    /// registered parameter (e.g. a prototype matrix computed on another tape).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        self.push(p.value.clone(), Op::Param(id), p.requires_grad)
    }

    /// Embedding lookup into a parameter table: row `i` of the output is row
    /// `rows[i]` of the table.
    pub fn embedding_lookup(
        &mut self,
        store: &ParamStore,
        id: ParamId,
        rows: &[usize],
    ) -> Result<Var> {
        let p = store.get(id);
        check_rank2("embedding_lookup", &p.value)?;
        let n = p.value.rows();
        let cols = p.value.cols();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            if r >= n {
                return Err(Error::invalid(
                    "embedding_lookup",
                    format!("row {r} out of range for table with {n} rows"),
                ));
            }
            data.extend_from_slice(p.value.row_slice(r));
        }
        let value = Tensor::matrix(rows.len(), cols, data)?;
        Ok(self.push(value, Op::ParamRows(id, rows.to_vec()), p.requires_grad))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        check_rank2("matmul", ta)?;
        check_rank2("matmul", tb)?;
        if ta.cols() != tb.rows() {
            return Err(Error::shape("matmul", &[ta.shape(), tb.shape()]));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let data = matmul_raw(ta.data(), tb.data(), m, k, n);
        let value = Tensor::matrix(m, n, data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let name = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
        };
        let (ta, tb) = (self.value(a), self.value(b));
        check_rank2(name, ta)?;
        check_rank2(name, tb)?;
        let (sa, sb) = (ta.shape(), tb.shape());
        let (rows, cols) = match (broadcast_dim(sa[0], sb[0]), broadcast_dim(sa[1], sb[1])) {
            (Some(r), Some(c)) => (r, c),
            _ => return Err(Error::shape(name, &[sa, sb])),
        };
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let x = ta.data()[bidx(sa, r, c)];
                let y = tb.data()[bidx(sb, r, c)];
                data.push(match kind {
                    BinaryKind::Add => x + y,
                    BinaryKind::Sub => x - y,
                    BinaryKind::Mul => x * y,
                });
            }
        }
        let value = Tensor::matrix(rows, cols, data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Binary(kind, a, b), rg))
    }

    /// Elementwise sum with row/column broadcasting of size-1 dimensions.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    /// Elementwise product with the same broadcasting rules as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let mut value = self.value(a).clone();
        value.data_mut().iter_mut().for_each(|v| *v *= factor);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, factor), rg)
    }

    /// Concatenates rank-2 tensors along `axis` (0 stacks rows, 1 joins columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::invalid("concat", "no inputs"));
        }
        if axis > 1 {
            return Err(Error::invalid("concat", format!("axis {axis} out of range")));
        }
        for &p in parts {
            check_rank2("concat", self.value(p))?;
        }
        let other = 1 - axis;
        let fixed = self.shape(parts[0])[other];
        if parts.iter().any(|&p| self.shape(p)[other] != fixed) {
            let shapes: Vec<&[usize]> = parts.iter().map(|&p| self.shape(p)).collect();
            return Err(Error::shape("concat", &shapes));
        }
        let total: usize = parts.iter().map(|&p| self.shape(p)[axis]).sum();
        let value = if axis == 0 {
            let mut data = Vec::with_capacity(total * fixed);
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
            }
            Tensor::matrix(total, fixed, data)?
        } else {
            let mut data = Vec::with_capacity(total * fixed);
            for r in 0..fixed {
                for &p in parts {
                    data.extend_from_slice(self.value(p).row_slice(r));
                }
            }
            Tensor::matrix(fixed, total, data)?
        };
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::Concat(parts.to_vec(), axis), rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let src = self.value(a);
        let data: Vec<f64> = src.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    /// Selects rows of a rank-2 tensor (embedding lookup on a non-parameter).
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let src = self.value(a);
        check_rank2("gather_rows", src)?;
        let mut data = Vec::with_capacity(rows.len() * src.cols());
        for &r in rows {
            if r >= src.rows() {
                return Err(Error::invalid(
                    "gather_rows",
                    format!("row {r} out of range for {:?}", src.shape()),
                ));
            }
            data.extend_from_slice(src.row_slice(r));
        }
        let value = Tensor::matrix(rows.len(), src.cols(), data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Gather(a, rows.to_vec()), rg))
    }

    /// Picks individual `(row, col)` entries into a `[1, k]` row.
    pub fn pick(&mut self, a: Var, coords: &[(usize, usize)]) -> Result<Var> {
        let src = self.value(a);
        check_rank2("pick", src)?;
        let mut data = Vec::with_capacity(coords.len());
        for &(r, c) in coords {
            if r >= src.rows() || c >= src.cols() {
                return Err(Error::invalid(
                    "pick",
                    format!("({r}, {c}) out of range for {:?}", src.shape()),
                ));
            }
            data.push(src.get(r, c));
        }
        let value = Tensor::row(data);
        let rg = self.rg(a);
        Ok(self.push(value, Op::Pick(a, coords.to_vec()), rg))
    }

    /// Inverted dropout. In [`Mode::Eval`] (or with `rate == 0`) this returns
    /// `a` itself without recording anything.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        a: Var,
        rate: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(
                "dropout",
                format!("rate {rate} outside [0, 1)"),
            ));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - rate;
        let n = self.value(a).numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| {
                if rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let src = self.value(a);
        let data: Vec<f64> = src.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(src.shape().to_vec(), data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Dropout(a, mask), rg))
    }

    fn check_axis(op: &'static str, t: &Tensor, axis: usize) -> Result<()> {
        check_rank2(op, t)?;
        if axis > 1 {
            return Err(Error::invalid(op, format!("axis {axis} out of range")));
        }
        if t.shape()[axis] == 0 {
            return Err(Error::invalid(op, "empty axis"));
        }
        Ok(())
    }

    /// Stable log-sum-exp along `axis`, keeping the reduced dimension as 1.
    pub fn log_sum_exp(&mut self, a: Var, axis: usize) -> Result<Var> {
        let src = self.value(a);
        Self::check_axis("log_sum_exp", src, axis)?;
        let shape = src.shape().to_vec();
        let (n_slices, len) = axis_slices(&shape, axis);
        let mut out = Vec::with_capacity(n_slices);
        let mut buf = vec![0.0; len];
        for s in 0..n_slices {
            for (k, b) in buf.iter_mut().enumerate() {
                *b = src.data()[axis_index(&shape, axis, s, k)];
            }
            out.push(log_sum_exp_slice(&buf));
        }
        let out_shape = if axis == 0 {
            vec![1, shape[1]]
        } else {
            vec![shape[0], 1]
        };
        let value = Tensor::new(out_shape, out)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::LogSumExp(a, axis), rg))
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let src = self.value(a);
        Self::check_axis("log_softmax", src, axis)?;
        let shape = src.shape().to_vec();
        let (n_slices, len) = axis_slices(&shape, axis);
        let mut data = vec![0.0; src.numel()];
        let mut buf = vec![0.0; len];
        for s in 0..n_slices {
            for (k, b) in buf.iter_mut().enumerate() {
                *b = src.data()[axis_index(&shape, axis, s, k)];
            }
            let lse = log_sum_exp_slice(&buf);
            for (k, b) in buf.iter().enumerate() {
                data[axis_index(&shape, axis, s, k)] = b - lse;
            }
        }
        let value = Tensor::new(shape, data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::LogSoftmax(a, axis), rg))
    }

    /// Sum of all entries as a `[1, 1]` scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let total: f64 = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(total), Op::Sum(a), rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let src = self.value(a);
        check_rank2("slice_rows", src)?;
        if start + len > src.rows() {
            return Err(Error::invalid(
                "slice_rows",
                format!("rows {start}..{} out of range for {:?}", start + len, src.shape()),
            ));
        }
        let c = src.cols();
        let data = src.data()[start * c..(start + len) * c].to_vec();
        let value = Tensor::matrix(len, c, data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::SliceRows(a, start), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let src = self.value(a);
        check_rank2("slice_cols", src)?;
        if start + len > src.cols() {
            return Err(Error::invalid(
                "slice_cols",
                format!("cols {start}..{} out of range for {:?}", start + len, src.shape()),
            ));
        }
        let mut data = Vec::with_capacity(src.rows() * len);
        for r in 0..src.rows() {
            data.extend_from_slice(&src.row_slice(r)[start..start + len]);
        }
        let value = Tensor::matrix(src.rows(), len, data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::SliceCols(a, start, len), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let src = self.value(a);
        check_rank2("transpose", src)?;
        let (m, n) = (src.rows(), src.cols());
        let mut data = vec![0.0; m * n];
        for r in 0..m {
            for c in 0..n {
                data[c * m + r] = src.get(r, c);
            }
        }
        let value = Tensor::matrix(n, m, data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Transpose(a), rg))
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        self.backward_seeded(&[(loss, vec![1.0])])
    }

    /// Reverse pass seeded with explicit upstream gradients for one or more
    /// nodes. Used to continue backpropagation across tapes.
    pub fn backward_seeded(&self, seeds: &[(Var, Vec<f64>)]) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyTape);
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        let mut last = 0;
        for (v, g) in seeds {
            if g.len() != self.value(*v).numel() {
                return Err(Error::shape(
                    "backward",
                    &[self.shape(*v), &[g.len()]],
                ));
            }
            accumulate(&mut grads[v.0], g);
            last = last.max(v.0);
        }
        for i in (0..=last).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Input | Op::Param(_) | Op::ParamRows(..) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.rg(*a) {
                    // dA = G B^T
                    let mut da = vec![0.0; m * k];
                    for r in 0..m {
                        for p in 0..k {
                            let brow = &tb.data()[p * n..(p + 1) * n];
                            let grow = &g[r * n..(r + 1) * n];
                            da[r * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    accumulate(&mut grads[a.0], &da);
                }
                if self.rg(*b) {
                    // dB = A^T G
                    let mut db = vec![0.0; k * n];
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let av = ta.data()[r * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            let drow = &mut db[p * n..(p + 1) * n];
                            for (d, gv) in drow.iter_mut().zip(grow) {
                                *d += av * gv;
                            }
                        }
                    }
                    accumulate(&mut grads[b.0], &db);
                }
            }
            Op::Binary(kind, a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (sa, sb) = (ta.shape(), tb.shape());
                let (rows, cols) = (out.rows(), out.cols());
                let mut da = if self.rg(*a) { Some(vec![0.0; ta.numel()]) } else { None };
                let mut db = if self.rg(*b) { Some(vec![0.0; tb.numel()]) } else { None };
                for r in 0..rows {
                    for c in 0..cols {
                        let gv = g[r * cols + c];
                        let (ia, ib) = (bidx(sa, r, c), bidx(sb, r, c));
                        let (ga, gb) = match kind {
                            BinaryKind::Add => (gv, gv),
                            BinaryKind::Sub => (gv, -gv),
                            BinaryKind::Mul => (gv * tb.data()[ib], gv * ta.data()[ia]),
                        };
                        if let Some(d) = da.as_mut() {
                            d[ia] += ga;
                        }
                        if let Some(d) = db.as_mut() {
                            d[ib] += gb;
                        }
                    }
                }
                if let Some(d) = da {
                    accumulate(&mut grads[a.0], &d);
                }
                if let Some(d) = db {
                    accumulate(&mut grads[b.0], &d);
                }
            }
            Op::Scale(a, f) => {
                let d: Vec<f64> = g.iter().map(|v| v * f).collect();
                accumulate(&mut grads[a.0], &d);
            }
            Op::Concat(parts, axis) => {
                if *axis == 0 {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.value(*p).numel();
                        if self.rg(*p) {
                            accumulate(&mut grads[p.0], &g[offset..offset + n]);
                        }
                        offset += n;
                    }
                } else {
                    let total = out.cols();
                    let mut col = 0;
                    for p in parts {
                        let tp = self.value(*p);
                        let w = tp.cols();
                        if self.rg(*p) {
                            let mut d = Vec::with_capacity(tp.numel());
                            for r in 0..tp.rows() {
                                d.extend_from_slice(&g[r * total + col..r * total + col + w]);
                            }
                            accumulate(&mut grads[p.0], &d);
                        }
                        col += w;
                    }
                }
            }
            Op::Tanh(a) => {
                let d: Vec<f64> = g
                    .iter()
                    .zip(out.data())
                    .map(|(gv, y)| gv * (1.0 - y * y))
                    .collect();
                accumulate(&mut grads[a.0], &d);
            }
            Op::Sigmoid(a) => {
                let d: Vec<f64> = g
                    .iter()
                    .zip(out.data())
                    .map(|(gv, y)| gv * y * (1.0 - y))
                    .collect();
                accumulate(&mut grads[a.0], &d);
            }
            Op::Exp(a) => {
                let d: Vec<f64> = g.iter().zip(out.data()).map(|(gv, y)| gv * y).collect();
                accumulate(&mut grads[a.0], &d);
            }
            Op::Gather(a, rows) => {
                let src = self.value(*a);
                let c = src.cols();
                let mut d = vec![0.0; src.numel()];
                for (k, &r) in rows.iter().enumerate() {
                    for j in 0..c {
                        d[r * c + j] += g[k * c + j];
                    }
                }
                accumulate(&mut grads[a.0], &d);
            }
            Op::Pick(a, coords) => {
                let src = self.value(*a);
                let c = src.cols();
                let mut d = vec![0.0; src.numel()];
                for (k, &(r, col)) in coords.iter().enumerate() {
                    d[r * c + col] += g[k];
                }
                accumulate(&mut grads[a.0], &d);
            }
            Op::Dropout(a, mask) => {
                let d: Vec<f64> = g.iter().zip(mask).map(|(gv, m)| gv * m).collect();
                accumulate(&mut grads[a.0], &d);
            }
            Op::LogSumExp(a, axis) => {
                // d lse / dx_k = softmax_k
                let src = self.value(*a);
                let shape = src.shape();
                let (n_slices, len) = axis_slices(shape, *axis);
                let mut d = vec![0.0; src.numel()];
                for s in 0..n_slices {
                    let lse = out.data()[s];
                    for k in 0..len {
                        let idx = axis_index(shape, *axis, s, k);
                        d[idx] = g[s] * (src.data()[idx] - lse).exp();
                    }
                }
                accumulate(&mut grads[a.0], &d);
            }
            Op::LogSoftmax(a, axis) => {
                // dx_k = g_k - softmax_k * sum_j g_j
                let shape = out.shape();
                let (n_slices, len) = axis_slices(shape, *axis);
                let mut d = vec![0.0; out.numel()];
                for s in 0..n_slices {
                    let gsum: f64 = (0..len).map(|k| g[axis_index(shape, *axis, s, k)]).sum();
                    for k in 0..len {
                        let idx = axis_index(shape, *axis, s, k);
                        d[idx] = g[idx] - out.data()[idx].exp() * gsum;
                    }
                }
                accumulate(&mut grads[a.0], &d);
            }
            Op::Sum(a) => {
                let n = self.value(*a).numel();
                accumulate(&mut grads[a.0], &vec![g[0]; n]);
            }
            Op::SliceRows(a, start) => {
                let src = self.value(*a);
                let c = src.cols();
                let mut d = vec![0.0; src.numel()];
                d[start * c..start * c + g.len()].copy_from_slice(g);
                accumulate(&mut grads[a.0], &d);
            }
            Op::SliceCols(a, start, len) => {
                let src = self.value(*a);
                let c = src.cols();
                let mut d = vec![0.0; src.numel()];
                for r in 0..src.rows() {
                    d[r * c + start..r * c + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                accumulate(&mut grads[a.0], &d);
            }
            Op::Transpose(a) => {
                let (m, n) = (out.rows(), out.cols());
                let mut d = vec![0.0; m * n];
                for r in 0..m {
                    for c in 0..n {
                        d[c * m + r] = g[r * n + c];
                    }
                }
                accumulate(&mut grads[a.0], &d);
            }
        }
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g.to_vec()),
    }
}

/// Result of a reverse pass: one optional gradient buffer per tape node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Extracts parameter gradients recorded on `tape` into an owned,
    /// tape-independent list.
    pub fn param_grads(&self, tape: &Tape) -> ParamGrads {
        let mut entries = Vec::new();
        for (i, node) in tape.nodes.iter().enumerate() {
            let Some(g) = self.grads[i].as_ref() else { continue };
            match &node.op {
                Op::Param(id) => entries.push(ParamGrad::Dense(*id, g.clone())),
                Op::ParamRows(id, rows) => {
                    entries.push(ParamGrad::Rows(*id, rows.clone(), g.clone()))
                }
                _ => {}
            }
        }
        ParamGrads { entries }
    }

    /// Accumulates parameter gradients straight into `store`.
    pub fn accumulate_into(&self, tape: &Tape, store: &mut ParamStore) {
        self.param_grads(tape).accumulate_into(store);
    }
}

#[derive(Clone, Debug)]
pub enum ParamGrad {
    Dense(ParamId, Vec<f64>),
    Rows(ParamId, Vec<usize>, Vec<f64>),
}

/// Parameter gradients detached from the tape that produced them, so they
/// can be sent across threads and reduced in a fixed order.
#[derive(Clone, Debug, Default)]
pub struct ParamGrads {
    entries: Vec<ParamGrad>,
}

impl ParamGrads {
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for e in &self.entries {
            match e {
                ParamGrad::Dense(id, g) => store.accumulate(*id, g),
                ParamGrad::Rows(id, rows, g) => store.accumulate_rows(*id, rows, g),
            }
        }
    }

    pub fn entries(&self) -> &[ParamGrad] {
        &self.entries
    }
}
