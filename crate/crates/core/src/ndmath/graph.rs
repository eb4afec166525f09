//! Tape-based reverse-mode automatic differentiation.
//!
//! Every op evaluates eagerly and appends a node whose inputs are earlier
//! nodes, so the tape is topologically ordered by construction and the
//! backward pass is a single reverse sweep.

use super::tensor::{gemm_strided, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
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
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    LayerNorm(Var, f64),
    SoftmaxRows(Var),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Gather(Var, Vec<usize>),
    GatherRows(Var, Vec<usize>),
    Cosine(Var, Var, f64),
    LogSumExp(Var),
    DepthwiseConv(Var, Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    trainable: bool,
}

/// Computation tape. Single-threaded; build one per training step.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every trainable leaf.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a leaf; `None` when the root does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for a leaf, materialising zeros when the root does not depend on it.
    pub fn get_or_zeros(&self, g: &Graph, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(g.value(v).shape()))
    }
}

fn shape_err(op: &str, detail: String) -> Error {
    Error::dim("ndmath", format!("{op}: {detail}"))
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let needs_grad = self.inputs_need_grad(&op);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            trainable: false,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn inputs_need_grad(&self, op: &Op) -> bool {
        let ng = |v: &Var| self.nodes[v.0].needs_grad;
        match op {
            Op::Leaf => false,
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::MulRow(a, b)
            | Op::Cosine(a, b, _)
            | Op::DepthwiseConv(a, b) => ng(a) || ng(b),
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::LayerNorm(a, _)
            | Op::SoftmaxRows(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::MeanRows(a)
            | Op::SliceRows(a, _)
            | Op::SliceCols(a, _)
            | Op::Gather(a, _)
            | Op::GatherRows(a, _)
            | Op::LogSumExp(a) => ng(a),
            Op::ConcatRows(vs) | Op::ConcatCols(vs) => vs.iter().any(ng),
        }
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor) -> Result<Var> {
        if !t.is_finite() {
            return Err(Error::NonFinite { op: "param" });
        }
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: true,
            trainable: true,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, "constant")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = super::tensor::matmul(self.value(a), self.value(b))?;
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        self.push(out, Op::Transpose(a), "transpose")
    }

    fn zip_same(&self, op: &str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| f(*x)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        self.push(out, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        self.push(out, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.map(a, |x| x * s);
        self.push(out, Op::Scale(a, s), "scale")
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.map(a, |x| x + s);
        self.push(out, Op::AddScalar(a), "add_scalar")
    }

    fn row_op(&self, op: &str, a: Var, r: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tr) = (self.value(a), self.value(r));
        let (m, n) = ta.dims2()?;
        if tr.numel() != n {
            return Err(shape_err(
                op,
                format!("row vector of {} for {m}x{n}", tr.numel()),
            ));
        }
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(n) {
            for (x, y) in row.iter_mut().zip(tr.data()) {
                *x = f(*x, *y);
            }
        }
        Tensor::new(ta.shape().to_vec(), data)
    }

    /// Adds a length-N vector to every row of an M×N matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let out = self.row_op("add_row", a, row, |x, y| x + y)?;
        self.push(out, Op::AddRow(a, row), "add_row")
    }

    /// Multiplies every row of an M×N matrix by a length-N vector.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let out = self.row_op("mul_row", a, row, |x, y| x * y)?;
        self.push(out, Op::MulRow(a, row), "mul_row")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.map(a, sigmoid);
        self.push(out, Op::Sigmoid(a), "sigmoid")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.map(a, f64::tanh);
        self.push(out, Op::Tanh(a), "tanh")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.map(a, |x| x.max(0.0));
        self.push(out, Op::Relu(a), "relu")
    }

    /// `x · sigmoid(x)`, composed from primitive ops.
    pub fn swish(&mut self, a: Var) -> Result<Var> {
        let s = self.sigmoid(a)?;
        self.mul(a, s)
    }

    /// Per-row normalisation to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        let ta = self.value(a);
        let (_, n) = ta.dims2()?;
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(n) {
            let (mean, inv) = row_stats(row, eps);
            row.iter_mut().for_each(|x| *x = (*x - mean) * inv);
        }
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(out, Op::LayerNorm(a, eps), "layer_norm")
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let (_, n) = ta.dims2()?;
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(n) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                z += *x;
            }
            row.iter_mut().for_each(|x| *x /= z);
        }
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(out, Op::SoftmaxRows(a), "softmax_rows")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.numel() == 0 {
            return Err(Error::domain("ndmath", "mean of an empty tensor"));
        }
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), "mean")
    }

    /// Column means of an M×N matrix, as a 1×N matrix.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (m, n) = t.dims2()?;
        if m == 0 {
            return Err(Error::domain("ndmath", "mean_rows of an empty matrix"));
        }
        let mut out = vec![0.0; n];
        for row in t.data().chunks(n) {
            out.iter_mut().zip(row).for_each(|(o, x)| *o += x);
        }
        out.iter_mut().for_each(|o| *o /= m as f64);
        self.push(Tensor::matrix(1, n, out)?, Op::MeanRows(a), "mean_rows")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::usage("ndmath", "concat_rows of nothing"));
        }
        let n = self.value(parts[0]).dims2()?.1;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if c != n {
                return Err(shape_err("concat_rows", format!("{c} columns vs {n}")));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::matrix(rows, n, data)?;
        self.push(out, Op::ConcatRows(parts.to_vec()), "concat_rows")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::usage("ndmath", "concat_cols of nothing"));
        }
        let m = self.value(parts[0]).dims2()?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != m {
                return Err(shape_err("concat_cols", format!("{r} rows vs {m}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let out = Tensor::matrix(m, total, data)?;
        self.push(out, Op::ConcatCols(parts.to_vec()), "concat_cols")
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        let (m, n) = t.dims2()?;
        if start >= end || end > m {
            return Err(shape_err("slice_rows", format!("{start}..{end} of {m} rows")));
        }
        let out = Tensor::matrix(end - start, n, t.data()[start * n..end * n].to_vec())?;
        self.push(out, Op::SliceRows(a, start), "slice_rows")
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        let (m, n) = t.dims2()?;
        if start >= end || end > n {
            return Err(shape_err("slice_cols", format!("{start}..{end} of {n} cols")));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(m * w);
        for row in t.data().chunks(n) {
            data.extend_from_slice(&row[start..end]);
        }
        let out = Tensor::matrix(m, w, data)?;
        self.push(out, Op::SliceCols(a, start), "slice_cols")
    }

    /// Flat-index selection into a 1-D tensor.
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let n = t.numel();
        let mut data = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= n {
                return Err(shape_err("gather", format!("index {i} out of {n}")));
            }
            data.push(t.data()[i]);
        }
        self.push(Tensor::vector(data), Op::Gather(a, indices.to_vec()), "gather")
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let (m, n) = t.dims2()?;
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            if r >= m {
                return Err(shape_err("gather_rows", format!("row {r} out of {m}")));
            }
            data.extend_from_slice(&t.data()[r * n..(r + 1) * n]);
        }
        let out = Tensor::matrix(rows.len(), n, data)?;
        self.push(out, Op::GatherRows(a, rows.to_vec()), "gather_rows")
    }

    /// Pairwise cosine similarity between rows of `a` (P×D) and rows of `b` (Q×D).
    pub fn cosine_matrix(&mut self, a: Var, b: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::domain("ndmath", "cosine eps must be positive"));
        }
        let out = cosine_matrix(self.value(a), self.value(b), eps)?;
        self.push(out, Op::Cosine(a, b, eps), "cosine_matrix")
    }

    /// Numerically stabilised `log Σ exp(x)` over every element.
    pub fn log_sum_exp(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let v = log_sum_exp(t.data())?;
        self.push(Tensor::scalar(v), Op::LogSumExp(a), "log_sum_exp")
    }

    /// Same-padded depthwise convolution over rows (time) of `x` (T×C)
    /// with `kernel` (W×C), W odd.
    pub fn depthwise_conv(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let (tx, tk) = (self.value(x), self.value(kernel));
        let (t, c) = tx.dims2()?;
        let (w, kc) = tk.dims2()?;
        if kc != c || w % 2 == 0 {
            return Err(shape_err(
                "depthwise_conv",
                format!("kernel {w}x{kc} for input {t}x{c}"),
            ));
        }
        let half = (w / 2) as isize;
        let mut out = vec![0.0; t * c];
        for ti in 0..t {
            let orow = &mut out[ti * c..(ti + 1) * c];
            for o in -half..=half {
                let src = ti as isize + o;
                if src < 0 || src >= t as isize {
                    continue;
                }
                let xrow = tx.row(src as usize);
                let krow = tk.row((o + half) as usize);
                for ch in 0..c {
                    orow[ch] += krow[ch] * xrow[ch];
                }
            }
        }
        let out = Tensor::matrix(t, c, out)?;
        self.push(out, Op::DepthwiseConv(x, kernel), "depthwise_conv")
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if rv.numel() != 1 {
            return Err(Error::usage(
                "ndmath",
                format!("backward root must be scalar, got shape {:?}", rv.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::full(rv.shape(), 1.0));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if node.trainable {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        // Only leaves keep gradients.
        for (i, g) in grads.iter_mut().enumerate() {
            if !self.nodes[i].trainable {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let ng = |v: Var| self.nodes[v.0].needs_grad;
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).dims2().expect("matrix");
                let n = val(*b).dims2().expect("matrix").1;
                if ng(*a) {
                    // dA = dC · Bᵀ
                    let buf = grad_buf(grads, self, *a);
                    gemm_strided(
                        m,
                        n,
                        k,
                        gd,
                        (n as isize, 1),
                        val(*b).data(),
                        (1, n as isize),
                        buf,
                        1.0,
                    );
                }
                if ng(*b) {
                    // dB = Aᵀ · dC
                    let buf = grad_buf(grads, self, *b);
                    gemm_strided(
                        k,
                        m,
                        n,
                        val(*a).data(),
                        (1, k as isize),
                        gd,
                        (n as isize, 1),
                        buf,
                        1.0,
                    );
                }
            }
            Op::Transpose(a) => {
                let gt = g.transpose().expect("matrix");
                accum(grads, self, *a, gt.data(), 1.0);
            }
            Op::Add(a, b) => {
                accum(grads, self, *a, gd, 1.0);
                accum(grads, self, *b, gd, 1.0);
            }
            Op::Sub(a, b) => {
                accum(grads, self, *a, gd, 1.0);
                accum(grads, self, *b, gd, -1.0);
            }
            Op::Mul(a, b) => {
                if ng(*a) {
                    let bd = val(*b).data();
                    let buf = grad_buf(grads, self, *a);
                    for ((o, gi), y) in buf.iter_mut().zip(gd).zip(bd) {
                        *o += gi * y;
                    }
                }
                if ng(*b) {
                    let ad = val(*a).data();
                    let buf = grad_buf(grads, self, *b);
                    for ((o, gi), x) in buf.iter_mut().zip(gd).zip(ad) {
                        *o += gi * x;
                    }
                }
            }
            Op::Scale(a, s) => accum(grads, self, *a, gd, *s),
            Op::AddScalar(a) => accum(grads, self, *a, gd, 1.0),
            Op::AddRow(a, r) => {
                accum(grads, self, *a, gd, 1.0);
                if ng(*r) {
                    let n = val(*r).numel();
                    let buf = grad_buf(grads, self, *r);
                    for row in gd.chunks(n) {
                        buf.iter_mut().zip(row).for_each(|(o, x)| *o += x);
                    }
                }
            }
            Op::MulRow(a, r) => {
                let n = val(*r).numel();
                if ng(*a) {
                    let rd = val(*r).data();
                    let buf = grad_buf(grads, self, *a);
                    for (orow, grow) in buf.chunks_mut(n).zip(gd.chunks(n)) {
                        for ((o, gi), y) in orow.iter_mut().zip(grow).zip(rd) {
                            *o += gi * y;
                        }
                    }
                }
                if ng(*r) {
                    let ad = val(*a).data();
                    let buf = grad_buf(grads, self, *r);
                    for (grow, arow) in gd.chunks(n).zip(ad.chunks(n)) {
                        for ((o, gi), x) in buf.iter_mut().zip(grow).zip(arow) {
                            *o += gi * x;
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                let buf = grad_buf(grads, self, *a);
                for ((o, gi), yi) in buf.iter_mut().zip(gd).zip(y) {
                    *o += gi * yi * (1.0 - yi);
                }
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                let buf = grad_buf(grads, self, *a);
                for ((o, gi), yi) in buf.iter_mut().zip(gd).zip(y) {
                    *o += gi * (1.0 - yi * yi);
                }
            }
            Op::Relu(a) => {
                let x = val(*a).data();
                let buf = grad_buf(grads, self, *a);
                for ((o, gi), xi) in buf.iter_mut().zip(gd).zip(x) {
                    if *xi > 0.0 {
                        *o += gi;
                    }
                }
            }
            Op::LayerNorm(a, eps) => {
                let x = val(*a);
                let n = x.dims2().expect("matrix").1;
                let y = node.value.data();
                let xd = x.data();
                let buf = grad_buf(grads, self, *a);
                for (((orow, grow), yrow), xrow) in buf
                    .chunks_mut(n)
                    .zip(gd.chunks(n))
                    .zip(y.chunks(n))
                    .zip(xd.chunks(n))
                {
                    let (_, inv) = row_stats(xrow, *eps);
                    let mg = grow.iter().sum::<f64>() / n as f64;
                    let mgy = grow.iter().zip(yrow).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    for ((o, gi), yi) in orow.iter_mut().zip(grow).zip(yrow) {
                        *o += inv * (gi - mg - yi * mgy);
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                let n = node.value.dims2().expect("matrix").1;
                let y = node.value.data();
                let buf = grad_buf(grads, self, *a);
                for ((orow, grow), yrow) in buf.chunks_mut(n).zip(gd.chunks(n)).zip(y.chunks(n)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for ((o, gi), yi) in orow.iter_mut().zip(grow).zip(yrow) {
                        *o += yi * (gi - dot);
                    }
                }
            }
            Op::Sum(a) => {
                let g0 = gd[0];
                grad_buf(grads, self, *a).iter_mut().for_each(|o| *o += g0);
            }
            Op::Mean(a) => {
                let g0 = gd[0] / val(*a).numel() as f64;
                grad_buf(grads, self, *a).iter_mut().for_each(|o| *o += g0);
            }
            Op::MeanRows(a) => {
                let (m, n) = val(*a).dims2().expect("matrix");
                let buf = grad_buf(grads, self, *a);
                for row in buf.chunks_mut(n) {
                    for (o, gi) in row.iter_mut().zip(gd) {
                        *o += gi / m as f64;
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = val(p).numel();
                    accum(grads, self, p, &gd[off..off + len], 1.0);
                    off += len;
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.dims2().expect("matrix").1;
                let mut col = 0;
                for &p in parts {
                    let w = val(p).dims2().expect("matrix").1;
                    if ng(p) {
                        let buf = grad_buf(grads, self, p);
                        for (orow, grow) in buf.chunks_mut(w).zip(gd.chunks(total)) {
                            orow.iter_mut()
                                .zip(&grow[col..col + w])
                                .for_each(|(o, x)| *o += x);
                        }
                    }
                    col += w;
                }
            }
            Op::SliceRows(a, start) => {
                let n = val(*a).dims2().expect("matrix").1;
                if ng(*a) {
                    let buf = grad_buf(grads, self, *a);
                    buf[start * n..start * n + gd.len()]
                        .iter_mut()
                        .zip(gd)
                        .for_each(|(o, x)| *o += x);
                }
            }
            Op::SliceCols(a, start) => {
                let n = val(*a).dims2().expect("matrix").1;
                let w = node.value.dims2().expect("matrix").1;
                if ng(*a) {
                    let buf = grad_buf(grads, self, *a);
                    for (orow, grow) in buf.chunks_mut(n).zip(gd.chunks(w)) {
                        orow[*start..start + w]
                            .iter_mut()
                            .zip(grow)
                            .for_each(|(o, x)| *o += x);
                    }
                }
            }
            Op::Gather(a, idx) => {
                if ng(*a) {
                    let buf = grad_buf(grads, self, *a);
                    for (&i, gi) in idx.iter().zip(gd) {
                        buf[i] += gi;
                    }
                }
            }
            Op::GatherRows(a, rows) => {
                let n = val(*a).dims2().expect("matrix").1;
                if ng(*a) {
                    let buf = grad_buf(grads, self, *a);
                    for (&r, grow) in rows.iter().zip(gd.chunks(n)) {
                        buf[r * n..(r + 1) * n]
                            .iter_mut()
                            .zip(grow)
                            .for_each(|(o, x)| *o += x);
                    }
                }
            }
            Op::Cosine(a, b, eps) => {
                let (ga, gb) = cosine_backward(val(*a), val(*b), &node.value, g, *eps);
                if ng(*a) {
                    accum(grads, self, *a, &ga, 1.0);
                }
                if ng(*b) {
                    accum(grads, self, *b, &gb, 1.0);
                }
            }
            Op::LogSumExp(a) => {
                let x = val(*a).data();
                let y = node.value.data()[0];
                let g0 = gd[0];
                let buf = grad_buf(grads, self, *a);
                for (o, xi) in buf.iter_mut().zip(x) {
                    *o += g0 * (xi - y).exp();
                }
            }
            Op::DepthwiseConv(x, k) => {
                let tx = val(*x);
                let tk = val(*k);
                let (t, c) = tx.dims2().expect("matrix");
                let w = tk.dims2().expect("matrix").0;
                let half = (w / 2) as isize;
                let mut gx = vec![0.0; t * c];
                let mut gk = vec![0.0; w * c];
                for ti in 0..t {
                    let grow = &gd[ti * c..(ti + 1) * c];
                    for o in -half..=half {
                        let src = ti as isize + o;
                        if src < 0 || src >= t as isize {
                            continue;
                        }
                        let src = src as usize;
                        let kr = (o + half) as usize;
                        for ch in 0..c {
                            gx[src * c + ch] += grow[ch] * tk.data()[kr * c + ch];
                            gk[kr * c + ch] += grow[ch] * tx.data()[src * c + ch];
                        }
                    }
                }
                if ng(*x) {
                    accum(grads, self, *x, &gx, 1.0);
                }
                if ng(*k) {
                    accum(grads, self, *k, &gk, 1.0);
                }
            }
        }
    }
}

fn grad_buf<'a>(grads: &'a mut [Option<Tensor>], g: &Graph, v: Var) -> &'a mut [f64] {
    grads[v.0]
        .get_or_insert_with(|| Tensor::zeros(g.value(v).shape()))
        .data_mut()
}

fn accum(grads: &mut [Option<Tensor>], g: &Graph, v: Var, src: &[f64], s: f64) {
    if !g.nodes[v.0].needs_grad {
        return;
    }
    let buf = grad_buf(grads, g, v);
    for (o, x) in buf.iter_mut().zip(src) {
        *o += s * x;
    }
}

fn row_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Stabilised `log Σ exp(x)`.
pub fn log_sum_exp(x: &[f64]) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::domain("ndmath", "log_sum_exp of an empty input"));
    }
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = x.iter().map(|v| (v - m).exp()).sum();
    Ok(m + s.ln())
}

fn norms(t: &Tensor) -> Vec<f64> {
    let n = t.dims2().map(|d| d.1).unwrap_or(1).max(1);
    t.data()
        .chunks(n)
        .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect()
}

/// Value-only cosine similarity matrix.
pub fn cosine_matrix(a: &Tensor, b: &Tensor, eps: f64) -> Result<Tensor> {
    let (p, d) = a.dims2()?;
    let (q, d2) = b.dims2()?;
    if d != d2 {
        return Err(shape_err(
            "cosine_matrix",
            format!("embedding dims {d} vs {d2}"),
        ));
    }
    let (na, nb) = (norms(a), norms(b));
    let mut out = vec![0.0; p * q];
    gemm_strided(
        p,
        d,
        q,
        a.data(),
        (d as isize, 1),
        b.data(),
        (1, d as isize),
        &mut out,
        0.0,
    );
    for i in 0..p {
        for j in 0..q {
            out[i * q + j] /= (na[i] * nb[j]).max(eps);
        }
    }
    Tensor::matrix(p, q, out)
}

fn cosine_backward(a: &Tensor, b: &Tensor, s: &Tensor, g: &Tensor, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let (p, d) = a.dims2().expect("matrix");
    let q = b.dims2().expect("matrix").0;
    let (na, nb) = (norms(a), norms(b));
    let mut ga = vec![0.0; p * d];
    let mut gb = vec![0.0; q * d];
    for i in 0..p {
        let ar = a.row(i);
        for j in 0..q {
            let gij = g.data()[i * q + j];
            if gij == 0.0 {
                continue;
            }
            let br = b.row(j);
            let den = na[i] * nb[j];
            let sij = s.data()[i * q + j];
            let sa = &mut ga[i * d..(i + 1) * d];
            if den > eps {
                let w = gij / den;
                let ca = gij * sij / (na[i] * na[i]);
                for k in 0..d {
                    sa[k] += w * br[k] - ca * ar[k];
                }
                let cb = gij * sij / (nb[j] * nb[j]);
                let sb = &mut gb[j * d..(j + 1) * d];
                for k in 0..d {
                    sb[k] += w * ar[k] - cb * br[k];
                }
            } else {
                let w = gij / eps;
                for k in 0..d {
                    sa[k] += w * br[k];
                }
                let sb = &mut gb[j * d..(j + 1) * d];
                for k in 0..d {
                    sb[k] += w * ar[k];
                }
            }
        }
    }
    (ga, gb)
}
