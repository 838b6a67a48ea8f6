//! Reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records every operation as a node; [`Tape::backward`] walks the
//! nodes in reverse creation order. Leaves created with [`Tape::param`] receive
//! gradients, leaves created with [`Tape::constant`] never do, so frozen
//! inputs (the semantic matrix, detached targets) are stop-gradients by
//! construction.
//!
//! Attention, layer normalization and softmax cross-entropy are fused ops with
//! hand-written backward passes.

use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;
const LN_EPS: f64 = 1e-8;

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    MulScalar(Var, Var),
    Affine(Var, f64),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    VStack(Vec<Var>),
    Gather(Var, Vec<usize>),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Matrix, inv_std: Vec<f64> },
    Attention { q: Var, k: Var, v: Var, segments: Vec<(usize, usize)>, heads: usize, probs: Vec<Vec<f64>> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Matrix },
    RowNormalize { x: Var, norms: Vec<f64> },
    RowSum(Var),
    Mean(Var),
    Sum(Var),
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by leaf variable.
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

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn param(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf, true)
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let m = self.value(v).clone();
        self.constant(m)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(y, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(y, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(y, Op::Mul(a, b), ng)
    }

    /// `x + bias` with a `1 × n` bias broadcast over rows.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let (xv, bv) = (self.value(x), self.value(bias));
        assert_eq!(bv.rows(), 1, "add_row bias must be a row vector");
        assert_eq!(bv.cols(), xv.cols(), "add_row width mismatch");
        let mut y = xv.clone();
        for r in 0..y.rows() {
            for (a, b) in y.row_mut(r).iter_mut().zip(bv.data()) {
                *a += b;
            }
        }
        let ng = self.ng(x) || self.ng(bias);
        self.push(y, Op::AddRow(x, bias), ng)
    }

    /// `x ⊙ c` with an `n × 1` column broadcast over columns.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Var {
        let (xv, cv) = (self.value(x), self.value(col));
        assert_eq!(cv.shape(), (xv.rows(), 1), "mul_col expects an n x 1 column");
        let mut y = xv.clone();
        for r in 0..y.rows() {
            let c = cv.data()[r];
            y.row_mut(r).iter_mut().for_each(|a| *a *= c);
        }
        let ng = self.ng(x) || self.ng(col);
        self.push(y, Op::MulCol(x, col), ng)
    }

    /// `x · s` for a `1 × 1` variable `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Var {
        let sv = self.value(s).item();
        let y = self.value(x).scale(sv);
        let ng = self.ng(x) || self.ng(s);
        self.push(y, Op::MulScalar(x, s), ng)
    }

    /// `a·x + b` elementwise with constant `a`, `b`.
    pub fn affine(&mut self, x: Var, a: f64, b: f64) -> Var {
        let y = self.value(x).map(|v| a * v + b);
        let ng = self.ng(x);
        self.push(y, Op::Affine(x, a), ng)
    }

    pub fn scale(&mut self, x: Var, a: f64) -> Var {
        self.affine(x, a, 0.0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(y, Op::MatMul(a, b), ng)
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a).gemm(false, self.value(b), true);
        let ng = self.ng(a) || self.ng(b);
        self.push(y, Op::MatMulT(a, b), ng)
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let y = self.value(x).transpose();
        let ng = self.ng(x);
        self.push(y, Op::Transpose(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(sigmoid);
        let ng = self.ng(x);
        self.push(y, Op::Sigmoid(x), ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = self.value(x).map(f64::tanh);
        let ng = self.ng(x);
        self.push(y, Op::Tanh(x), ng)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(gelu);
        let ng = self.ng(x);
        self.push(y, Op::Gelu(x), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let y = Matrix::hcat(&mats);
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(y, Op::Concat(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let y = self.value(x).slice_cols(start, end);
        let ng = self.ng(x);
        self.push(y, Op::SliceCols(x, start), ng)
    }

    pub fn vstack(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let y = Matrix::vcat(&mats);
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(y, Op::VStack(parts.to_vec()), ng)
    }

    /// Row lookup: output row `o` is row `idx[o]` of `table`.
    pub fn gather(&mut self, table: Var, idx: &[usize]) -> Var {
        let y = self.value(table).select_rows(idx);
        let ng = self.ng(table);
        self.push(y, Op::Gather(table, idx.to_vec()), ng)
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` (`1 × n`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let (rows, cols) = xv.shape();
        let mut xhat = Matrix::zeros(rows, cols);
        let mut y = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for c in 0..cols {
                let h = (row[c] - mean) * is;
                xhat.set(r, c, h);
                y.set(r, c, h * g[c] + b[c]);
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push(y, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, ng)
    }

    /// Multi-head causal scaled dot-product attention over packed sequences.
    ///
    /// `q`, `k`, `v` are `N × d` with the rows of every sequence stored
    /// contiguously; `segments` lists `(start, len)` per sequence. Row `i` of a
    /// segment attends to rows `0..=i` of the same segment only.
    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var, segments: &[(usize, usize)], heads: usize) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (n, d) = qv.shape();
        assert!(heads >= 1 && d % heads == 0, "width {d} not divisible by {heads} heads");
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Matrix::zeros(n, d);
        let mut probs = Vec::with_capacity(segments.len() * heads);
        for &(start, len) in segments {
            for h in 0..heads {
                let off = h * dh;
                let mut p = vec![0.0; len * len];
                for i in 0..len {
                    let qi = &qv.row(start + i)[off..off + dh];
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..=i {
                        let kj = &kv.row(start + j)[off..off + dh];
                        let s = crate::tensor::dot(qi, kj) * scale;
                        p[i * len + j] = s;
                        max = max.max(s);
                    }
                    let mut z = 0.0;
                    for j in 0..=i {
                        let e = (p[i * len + j] - max).exp();
                        p[i * len + j] = e;
                        z += e;
                    }
                    for j in 0..=i {
                        p[i * len + j] /= z;
                    }
                    let orow = &mut out.row_mut(start + i)[off..off + dh];
                    for j in 0..=i {
                        let w = p[i * len + j];
                        let vj = &vv.row(start + j)[off..off + dh];
                        for (o, x) in orow.iter_mut().zip(vj) {
                            *o += w * x;
                        }
                    }
                }
                probs.push(p);
            }
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        self.push(out, Op::Attention { q, k, v, segments: segments.to_vec(), heads, probs }, ng)
    }

    /// Mean over rows of `-log softmax(logits_i)[targets_i]`, as a `1 × 1`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), targets.len(), "one target per logit row");
        let mut probs = Matrix::zeros(lv.rows(), lv.cols());
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = lv.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + z.ln();
            total += lse - row[t];
            for (p, v) in probs.row_mut(r).iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
        }
        let y = Matrix::scalar(total / targets.len() as f64);
        let ng = self.ng(logits);
        self.push(y, Op::CrossEntropy { logits, targets: targets.to_vec(), probs }, ng)
    }

    /// Scales each row to unit L2 norm. Caller guarantees non-zero rows.
    pub fn row_normalize(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut y = xv.clone();
        let mut norms = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let n = xv.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            norms.push(n);
            y.row_mut(r).iter_mut().for_each(|v| *v /= n);
        }
        let ng = self.ng(x);
        self.push(y, Op::RowNormalize { x, norms }, ng)
    }

    /// `n × m → n × 1`.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = (0..xv.rows()).map(|r| xv.row(r).iter().sum()).collect();
        let y = Matrix::from_vec(xv.rows(), 1, data).expect("row_sum shape");
        let ng = self.ng(x);
        self.push(y, Op::RowSum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let y = Matrix::scalar(xv.sum() / xv.data().len() as f64);
        let ng = self.ng(x);
        self.push(y, Op::Mean(x), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let y = Matrix::scalar(self.value(x).sum());
        let ng = self.ng(x);
        self.push(y, Op::Sum(x), ng)
    }

    /// Gradients of the scalar `root` with respect to every `param` leaf.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).shape(), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Matrix>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[root.0] = Some(Matrix::scalar(1.0));

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], v: Var, contribution: Matrix) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&contribution),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn backprop_node(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    self.accumulate(grads, *a, g.zip_map(val(*b), |x, y| x * y));
                }
                if self.ng(*b) {
                    self.accumulate(grads, *b, g.zip_map(val(*a), |x, y| x * y));
                }
            }
            Op::AddRow(x, bias) => {
                self.accumulate(grads, *x, g.clone());
                if self.ng(*bias) {
                    self.accumulate(grads, *bias, col_sums(g));
                }
            }
            Op::MulCol(x, col) => {
                let (xv, cv) = (val(*x), val(*col));
                if self.ng(*x) {
                    let mut gx = g.clone();
                    for r in 0..gx.rows() {
                        let c = cv.data()[r];
                        gx.row_mut(r).iter_mut().for_each(|a| *a *= c);
                    }
                    self.accumulate(grads, *x, gx);
                }
                if self.ng(*col) {
                    let data = (0..g.rows()).map(|r| crate::tensor::dot(g.row(r), xv.row(r))).collect();
                    self.accumulate(grads, *col, Matrix::from_vec(g.rows(), 1, data).expect("col grad"));
                }
            }
            Op::MulScalar(x, s) => {
                if self.ng(*x) {
                    self.accumulate(grads, *x, g.scale(val(*s).item()));
                }
                if self.ng(*s) {
                    let gs = crate::tensor::dot(g.data(), val(*x).data());
                    self.accumulate(grads, *s, Matrix::scalar(gs));
                }
            }
            Op::Affine(x, a) => self.accumulate(grads, *x, g.scale(*a)),
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    self.accumulate(grads, *a, g.gemm(false, val(*b), true));
                }
                if self.ng(*b) {
                    self.accumulate(grads, *b, val(*a).gemm(true, g, false));
                }
            }
            Op::MatMulT(a, b) => {
                if self.ng(*a) {
                    self.accumulate(grads, *a, g.matmul(val(*b)));
                }
                if self.ng(*b) {
                    self.accumulate(grads, *b, g.gemm(true, val(*a), false));
                }
            }
            Op::Transpose(x) => self.accumulate(grads, *x, g.transpose()),
            Op::Sigmoid(x) => {
                let gx = g.zip_map(&node.value, |gi, y| gi * y * (1.0 - y));
                self.accumulate(grads, *x, gx);
            }
            Op::Tanh(x) => {
                let gx = g.zip_map(&node.value, |gi, y| gi * (1.0 - y * y));
                self.accumulate(grads, *x, gx);
            }
            Op::Gelu(x) => {
                let gx = g.zip_map(val(*x), |gi, xi| gi * gelu_grad(xi));
                self.accumulate(grads, *x, gx);
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if self.ng(p) {
                        self.accumulate(grads, p, g.slice_cols(off, off + w));
                    }
                    off += w;
                }
            }
            Op::SliceCols(x, start) => {
                let xv = val(*x);
                let mut gx = Matrix::zeros(xv.rows(), xv.cols());
                for r in 0..g.rows() {
                    gx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                self.accumulate(grads, *x, gx);
            }
            Op::VStack(parts) => {
                let mut off = 0;
                for &p in parts {
                    let rows = val(p).rows();
                    if self.ng(p) {
                        let idx: Vec<usize> = (off..off + rows).collect();
                        self.accumulate(grads, p, g.select_rows(&idx));
                    }
                    off += rows;
                }
            }
            Op::Gather(table, idx) => {
                let tv = val(*table);
                let mut gt = Matrix::zeros(tv.rows(), tv.cols());
                for (o, &i) in idx.iter().enumerate() {
                    for (a, b) in gt.row_mut(i).iter_mut().zip(g.row(o)) {
                        *a += b;
                    }
                }
                self.accumulate(grads, *table, gt);
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let gv = val(*gamma).data();
                let (rows, cols) = xhat.shape();
                if self.ng(*gamma) {
                    let mut gg = Matrix::zeros(1, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            gg.data_mut()[c] += g.get(r, c) * xhat.get(r, c);
                        }
                    }
                    self.accumulate(grads, *gamma, gg);
                }
                if self.ng(*beta) {
                    self.accumulate(grads, *beta, col_sums(g));
                }
                if self.ng(*x) {
                    let mut gx = Matrix::zeros(rows, cols);
                    let n = cols as f64;
                    for r in 0..rows {
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for c in 0..cols {
                            let d = g.get(r, c) * gv[c];
                            mean_d += d;
                            mean_dx += d * xhat.get(r, c);
                        }
                        mean_d /= n;
                        mean_dx /= n;
                        for c in 0..cols {
                            let d = g.get(r, c) * gv[c];
                            gx.set(r, c, inv_std[r] * (d - mean_d - xhat.get(r, c) * mean_dx));
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
            }
            Op::Attention { q, k, v, segments, heads, probs } => {
                let (qv, kv, vv) = (val(*q), val(*k), val(*v));
                let (n, d) = qv.shape();
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let mut gq = Matrix::zeros(n, d);
                let mut gk = Matrix::zeros(n, d);
                let mut gv = Matrix::zeros(n, d);
                let mut p_iter = probs.iter();
                for &(start, len) in segments {
                    for h in 0..*heads {
                        let p = p_iter.next().expect("cached probs");
                        let off = h * dh;
                        for i in 0..len {
                            let go = &g.row(start + i)[off..off + dh];
                            // dP_ij = dO_i · V_j ; dS = P ⊙ (dP − Σ_j P_ij dP_ij)
                            let mut dp = vec![0.0; i + 1];
                            let mut acc = 0.0;
                            for j in 0..=i {
                                dp[j] = crate::tensor::dot(go, &vv.row(start + j)[off..off + dh]);
                                acc += p[i * len + j] * dp[j];
                            }
                            for j in 0..=i {
                                let pij = p[i * len + j];
                                for (a, b) in gv.row_mut(start + j)[off..off + dh].iter_mut().zip(go) {
                                    *a += pij * b;
                                }
                                let ds = pij * (dp[j] - acc) * scale;
                                if ds != 0.0 {
                                    for c in 0..dh {
                                        let kjc = kv.get(start + j, off + c);
                                        let qic = qv.get(start + i, off + c);
                                        gq.data_mut()[(start + i) * d + off + c] += ds * kjc;
                                        gk.data_mut()[(start + j) * d + off + c] += ds * qic;
                                    }
                                }
                            }
                        }
                    }
                }
                self.accumulate(grads, *q, gq);
                self.accumulate(grads, *k, gk);
                self.accumulate(grads, *v, gv);
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let scale = g.item() / targets.len() as f64;
                let mut gl = probs.clone();
                for (r, &t) in targets.iter().enumerate() {
                    let row = gl.row_mut(r);
                    row[t] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= scale);
                }
                self.accumulate(grads, *logits, gl);
            }
            Op::RowNormalize { x, norms } => {
                let y = &node.value;
                let mut gx = g.clone();
                for r in 0..gx.rows() {
                    let gy = crate::tensor::dot(g.row(r), y.row(r));
                    let yr = y.row(r);
                    for (c, a) in gx.row_mut(r).iter_mut().enumerate() {
                        *a = (*a - yr[c] * gy) / norms[r];
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::RowSum(x) => {
                let xv = val(*x);
                let mut gx = Matrix::zeros(xv.rows(), xv.cols());
                for r in 0..xv.rows() {
                    let gr = g.data()[r];
                    gx.row_mut(r).iter_mut().for_each(|a| *a = gr);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Mean(x) => {
                let xv = val(*x);
                let s = g.item() / xv.data().len() as f64;
                self.accumulate(grads, *x, Matrix::filled(xv.rows(), xv.cols(), s));
            }
            Op::Sum(x) => {
                let xv = val(*x);
                self.accumulate(grads, *x, Matrix::filled(xv.rows(), xv.cols(), g.item()));
            }
        }
    }
}

fn col_sums(g: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (a, b) in out.data_mut().iter_mut().zip(g.row(r)) {
            *a += b;
        }
    }
    out
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}
