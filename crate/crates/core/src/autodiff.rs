//! Reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records every operation of a forward pass as a node that owns
//! its output value. [`Tape::backward`] walks the nodes in reverse order and
//! accumulates adjoints. Nodes that do not depend on any gradient-requiring
//! leaf are skipped, so frozen parameters and constant inputs cost nothing
//! on the way back.

use crate::tensor::Matrix;

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Relu(Var),
    Softmax { input: Var },
    LogSoftmax(Var),
    LayerNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    GatherRows { input: Var, index: Vec<usize> },
    GatherElems { input: Var, index: Vec<usize> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { input: Var, start: usize },
    SliceRows { input: Var, start: usize },
    RowSum(Var),
    Sum(Var),
    NegPick { input: Var, targets: Vec<Option<usize>> },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Marker index for [`Tape::gather_elems`]: the output element is zero.
pub const GATHER_ZERO: usize = usize::MAX;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads.get_mut(v.0).and_then(Option::take)
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

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
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

    pub fn leaf(&mut self, value: Matrix, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Matrix) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul_nt(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::MatMulNt(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    /// Adds the `1 × m` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let bv = self.value(b);
        assert_eq!(bv.rows(), 1, "add_row expects a single-row bias");
        assert_eq!(bv.cols(), self.value(a).cols(), "add_row width mismatch");
        let bias = bv.row(0).to_vec();
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(&bias) {
                *o += b;
            }
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::AddRow(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "mul shape mismatch");
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let out = Matrix::from_vec(av.rows(), av.cols(), data);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Mul(a, b), rg)
    }

    /// Scales row `i` of `a` by `col[i]` (`col` is `n × 1`).
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (av, cv) = (self.value(a), self.value(col));
        assert_eq!(cv.shape(), (av.rows(), 1), "mul_col expects an n x 1 column");
        let mut out = av.clone();
        for r in 0..out.rows() {
            let s = cv.get(r, 0);
            for o in out.row_mut(r) {
                *o *= s;
            }
        }
        let rg = self.rg(a) || self.rg(col);
        self.push(out, Op::MulCol(a, col), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self
            .value(a)
            .map(|x| 0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh()));
        let rg = self.rg(a);
        self.push(out, Op::Gelu(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    /// Row-wise softmax. With `causal`, entry `(i, j)` is masked out for `j > i`.
    pub fn softmax(&mut self, a: Var, causal: bool) -> Var {
        let av = self.value(a);
        let mut out = Matrix::zeros(av.rows(), av.cols());
        for r in 0..av.rows() {
            let limit = if causal { (r + 1).min(av.cols()) } else { av.cols() };
            let row = &av.row(r)[..limit];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let o = out.row_mut(r);
            let mut z = 0.0;
            for (j, &x) in row.iter().enumerate() {
                let e = (x - max).exp();
                o[j] = e;
                z += e;
            }
            for v in &mut o[..limit] {
                *v /= z;
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::Softmax { input: a }, rg)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = av.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            for v in row {
                *v -= lse;
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::LogSoftmax(a), rg)
    }

    /// Per-row layer normalization with `1 × m` gain and bias.
    pub fn layer_norm(&mut self, a: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let av = self.value(a);
        let (n, m) = av.shape();
        let g = self.value(gamma).row(0).to_vec();
        let b = self.value(beta).row(0).to_vec();
        assert_eq!(g.len(), m, "layer_norm gain width mismatch");
        let mut xhat = Matrix::zeros(n, m);
        let mut out = Matrix::zeros(n, m);
        let mut inv_std = Vec::with_capacity(n);
        for r in 0..n {
            let row = av.row(r);
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / m as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for j in 0..m {
                let xh = (row[j] - mean) * is;
                xhat.set(r, j, xh);
                out.set(r, j, xh * g[j] + b[j]);
            }
        }
        let rg = self.rg(a) || self.rg(gamma) || self.rg(beta);
        self.push(
            out,
            Op::LayerNorm {
                input: a,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    /// Output row `r` is input row `index[r]`.
    pub fn gather_rows(&mut self, a: Var, index: Vec<usize>) -> Var {
        let av = self.value(a);
        let mut out = Matrix::zeros(index.len(), av.cols());
        for (r, &src) in index.iter().enumerate() {
            out.row_mut(r).copy_from_slice(av.row(src));
        }
        let rg = self.rg(a);
        self.push(out, Op::GatherRows { input: a, index }, rg)
    }

    /// Output element `k` (row-major) is input element `index[k]` of the
    /// flattened input, or zero for [`GATHER_ZERO`].
    pub fn gather_elems(&mut self, a: Var, rows: usize, cols: usize, index: Vec<usize>) -> Var {
        assert_eq!(index.len(), rows * cols, "gather index length mismatch");
        let src = self.value(a).data();
        let data = index
            .iter()
            .map(|&i| if i == GATHER_ZERO { 0.0 } else { src[i] })
            .collect();
        let out = Matrix::from_vec(rows, cols, data);
        let rg = self.rg(a);
        self.push(out, Op::GatherElems { input: a, index }, rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.row_mut(r)[offset..offset + pv.cols()].copy_from_slice(pv.row(r));
            }
            offset += pv.cols();
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(pv.data());
            rows += pv.rows();
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Matrix::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice_cols(start, len);
        let rg = self.rg(a);
        self.push(out, Op::SliceCols { input: a, start }, rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice_rows(start, len);
        let rg = self.rg(a);
        self.push(out, Op::SliceRows { input: a, start }, rg)
    }

    /// `n × m → n × 1`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = (0..av.rows()).map(|r| av.row(r).iter().sum()).collect();
        let out = Matrix::from_vec(av.rows(), 1, data);
        let rg = self.rg(a);
        self.push(out, Op::RowSum(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::from_vec(1, 1, vec![self.value(a).sum()]);
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg)
    }

    /// `-Σ_i input[i, targets[i]]` over positions with a target.
    pub fn neg_pick(&mut self, a: Var, targets: Vec<Option<usize>>) -> Var {
        let av = self.value(a);
        assert_eq!(targets.len(), av.rows(), "one target slot per row");
        let total: f64 = targets
            .iter()
            .enumerate()
            .filter_map(|(r, t)| t.map(|c| av.get(r, c)))
            .sum();
        let out = Matrix::from_vec(1, 1, vec![-total]);
        let rg = self.rg(a);
        self.push(out, Op::NegPick { input: a, targets }, rg)
    }

    /// Back-propagates from the scalar `root` (seeded with 1).
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.shape(root), (1, 1), "backward root must be a scalar");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], v: Var, delta: Matrix) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, op: &Op, out: &Matrix, g: &Matrix, grads: &mut [Option<Matrix>]) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.matmul_nt(self.value(*b)));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, self.value(*a).matmul_tn(g));
                }
            }
            Op::MatMulNt(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.matmul(self.value(*b)));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, g.matmul_tn(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.rg(*b) {
                    let mut db = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, x) in db.row_mut(0).iter_mut().zip(g.row(r)) {
                            *d += x;
                        }
                    }
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let d = zip_map(g, self.value(*b), |x, y| x * y);
                    self.accumulate(grads, *a, d);
                }
                if self.rg(*b) {
                    let d = zip_map(g, self.value(*a), |x, y| x * y);
                    self.accumulate(grads, *b, d);
                }
            }
            Op::MulCol(a, c) => {
                let cv = self.value(*c);
                if self.rg(*a) {
                    let mut d = g.clone();
                    for r in 0..d.rows() {
                        let s = cv.get(r, 0);
                        for x in d.row_mut(r) {
                            *x *= s;
                        }
                    }
                    self.accumulate(grads, *a, d);
                }
                if self.rg(*c) {
                    let av = self.value(*a);
                    let data = (0..g.rows())
                        .map(|r| g.row(r).iter().zip(av.row(r)).map(|(x, y)| x * y).sum())
                        .collect();
                    self.accumulate(grads, *c, Matrix::from_vec(g.rows(), 1, data));
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.map(|x| x * s)),
            Op::Gelu(a) => {
                let d = zip_map(g, self.value(*a), |gy, x| {
                    let u = GELU_K * (x + GELU_C * x * x * x);
                    let t = u.tanh();
                    let du = GELU_K * (1.0 + 3.0 * GELU_C * x * x);
                    gy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                });
                self.accumulate(grads, *a, d);
            }
            Op::Relu(a) => {
                let d = zip_map(g, self.value(*a), |gy, x| if x > 0.0 { gy } else { 0.0 });
                self.accumulate(grads, *a, d);
            }
            Op::Softmax { input, .. } => {
                let mut d = Matrix::zeros(g.rows(), g.cols());
                for r in 0..g.rows() {
                    let p = out.row(r);
                    let gr = g.row(r);
                    let dot: f64 = p.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (j, dv) in d.row_mut(r).iter_mut().enumerate() {
                        *dv = p[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(grads, *input, d);
            }
            Op::LogSoftmax(a) => {
                let mut d = Matrix::zeros(g.rows(), g.cols());
                for r in 0..g.rows() {
                    let gsum: f64 = g.row(r).iter().sum();
                    let y = out.row(r);
                    let gr = g.row(r);
                    for (j, dv) in d.row_mut(r).iter_mut().enumerate() {
                        *dv = gr[j] - y[j].exp() * gsum;
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::LayerNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (n, m) = g.shape();
                let gam = self.value(*gamma).row(0);
                if self.rg(*input) {
                    let mut d = Matrix::zeros(n, m);
                    for r in 0..n {
                        let xh = xhat.row(r);
                        let gr = g.row(r);
                        let dxh: Vec<f64> = gr.iter().zip(gam).map(|(a, b)| a * b).collect();
                        let s1: f64 = dxh.iter().sum();
                        let s2: f64 = dxh.iter().zip(xh).map(|(a, b)| a * b).sum();
                        let k = inv_std[r] / m as f64;
                        for (j, dv) in d.row_mut(r).iter_mut().enumerate() {
                            *dv = k * (m as f64 * dxh[j] - s1 - xh[j] * s2);
                        }
                    }
                    self.accumulate(grads, *input, d);
                }
                if self.rg(*gamma) {
                    let mut dg = Matrix::zeros(1, m);
                    for r in 0..n {
                        for (j, dv) in dg.row_mut(0).iter_mut().enumerate() {
                            *dv += g.get(r, j) * xhat.get(r, j);
                        }
                    }
                    self.accumulate(grads, *gamma, dg);
                }
                if self.rg(*beta) {
                    let mut db = Matrix::zeros(1, m);
                    for r in 0..n {
                        for (dv, x) in db.row_mut(0).iter_mut().zip(g.row(r)) {
                            *dv += x;
                        }
                    }
                    self.accumulate(grads, *beta, db);
                }
            }
            Op::GatherRows { input, index } => {
                let (rows, cols) = self.shape(*input);
                let mut d = Matrix::zeros(rows, cols);
                for (r, &src) in index.iter().enumerate() {
                    for (dv, x) in d.row_mut(src).iter_mut().zip(g.row(r)) {
                        *dv += x;
                    }
                }
                self.accumulate(grads, *input, d);
            }
            Op::GatherElems { input, index } => {
                let (rows, cols) = self.shape(*input);
                let mut d = Matrix::zeros(rows, cols);
                let dd = d.data_mut();
                for (k, &src) in index.iter().enumerate() {
                    if src != GATHER_ZERO {
                        dd[src] += g.data()[k];
                    }
                }
                self.accumulate(grads, *input, d);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.rg(p) {
                        self.accumulate(grads, p, g.slice_cols(offset, w));
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let h = self.value(p).rows();
                    if self.rg(p) {
                        self.accumulate(grads, p, g.slice_rows(offset, h));
                    }
                    offset += h;
                }
            }
            Op::SliceCols { input, start } => {
                let (rows, cols) = self.shape(*input);
                let mut d = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    d.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                self.accumulate(grads, *input, d);
            }
            Op::SliceRows { input, start } => {
                let (rows, cols) = self.shape(*input);
                let mut d = Matrix::zeros(rows, cols);
                d.data_mut()[start * cols..(start + g.rows()) * cols].copy_from_slice(g.data());
                self.accumulate(grads, *input, d);
            }
            Op::RowSum(a) => {
                let (rows, cols) = self.shape(*a);
                let mut d = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    let s = g.get(r, 0);
                    d.row_mut(r).fill(s);
                }
                self.accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                let (rows, cols) = self.shape(*a);
                self.accumulate(grads, *a, Matrix::filled(rows, cols, g.get(0, 0)));
            }
            Op::NegPick { input, targets } => {
                let (rows, cols) = self.shape(*input);
                let mut d = Matrix::zeros(rows, cols);
                let s = g.get(0, 0);
                for (r, t) in targets.iter().enumerate() {
                    if let Some(c) = t {
                        d.set(r, *c, -s);
                    }
                }
                self.accumulate(grads, *input, d);
            }
        }
    }
}

fn zip_map(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Matrix::from_vec(a.rows(), a.cols(), data)
}
