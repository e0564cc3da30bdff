//! Matrix-level reverse-mode differentiation.
//!
//! A [`Tape`] records each primitive as it executes, in order, so the node
//! list is topologically sorted by construction. [`gradients`] walks it
//! backwards from a scalar output. Leaves are either parameters (gradients
//! are tracked) or constants.
//!
//! Besides dense primitives the tape has "edge" primitives over a fixed
//! sparsity pattern, where an `nnz x 1` column holds one value per stored
//! entry of the pattern. They keep graph attention and learned-weight
//! propagation sparse.

use std::sync::Arc;

use super::dense::{dot, softmax_into};
use super::{svd_thin, DenseMatrix, SparseMatrix};
use crate::error::{Error, Result};

/// Handle to a recorded value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Probability floor applied before taking logs in [`Tape::masked_nll`].
pub const PROB_FLOOR: f64 = 1e-12;

enum Op {
    Leaf,
    MatMul(Var, Var),
    SparseMatMul(Arc<SparseMatrix>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    Exp(Var),
    Abs(Var),
    RowSoftmax(Var),
    Sum(Var),
    SumSquares(Var),
    Nuclear(Var, DenseMatrix),
    Transpose(Var),
    RowNormalize(Var, Vec<f64>),
    PairwiseSqDist(Var),
    SymNormalize(Var, Vec<f64>),
    GatherPairs {
        s: Var,
        t: Var,
        pattern: Arc<SparseMatrix>,
        sign: f64,
    },
    GatherGram {
        z: Var,
        pattern: Arc<SparseMatrix>,
    },
    EdgeSoftmax {
        e: Var,
        pattern: Arc<SparseMatrix>,
    },
    EdgeSymNormalize {
        w: Var,
        pattern: Arc<SparseMatrix>,
        dinv: Vec<f64>,
    },
    EdgeSpMM {
        w: Var,
        pattern: Arc<SparseMatrix>,
        h: Var,
    },
    MaskedNll {
        z: Var,
        labels: Arc<Vec<usize>>,
        mask: Arc<Vec<usize>>,
    },
}

struct Node {
    value: DenseMatrix,
    op: Op,
    tracked: bool,
}

/// Operation recorder. Single writer; build a fresh tape per forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    floor_hits: usize,
}

fn shape_err(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::shape(op, format!("{a:?} vs {b:?}"))
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

    /// Number of times [`Tape::masked_nll`] clamped a probability at
    /// [`PROB_FLOOR`].
    pub fn floor_hits(&self) -> usize {
        self.floor_hits
    }

    fn push(&mut self, value: DenseMatrix, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.get(0, 0)
    }

    /// A differentiable leaf.
    pub fn param(&mut self, value: DenseMatrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable leaf.
    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::MatMul(a, b), tracked))
    }

    /// `s * b` for a constant sparse `s`.
    pub fn sparse_matmul(&mut self, s: Arc<SparseMatrix>, b: Var) -> Result<Var> {
        let value = s.matmul_dense(self.value(b))?;
        let tracked = self.tracked(b);
        Ok(self.push(value, Op::SparseMatMul(s, b), tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Add(a, b), tracked))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Sub(a, b), tracked))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Mul(a, b), tracked))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        let tracked = self.tracked(a);
        self.push(value, Op::Scale(a, s), tracked)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        let tracked = self.tracked(a);
        self.push(value, Op::Relu(a), tracked)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = super::dense::leaky_relu(self.value(a), slope);
        let tracked = self.tracked(a);
        self.push(value, Op::LeakyRelu(a, slope), tracked)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        let tracked = self.tracked(a);
        self.push(value, Op::Exp(a), tracked)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::abs);
        let tracked = self.tracked(a);
        self.push(value, Op::Abs(a), tracked)
    }

    /// Unmasked row softmax.
    pub fn row_softmax(&mut self, a: Var) -> Var {
        let value = super::dense::row_softmax(self.value(a), None).expect("unmasked softmax");
        let tracked = self.tracked(a);
        self.push(value, Op::RowSoftmax(a), tracked)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = DenseMatrix::filled(1, 1, self.value(a).sum());
        let tracked = self.tracked(a);
        self.push(value, Op::Sum(a), tracked)
    }

    /// Sum of squared entries.
    pub fn sum_squares(&mut self, a: Var) -> Var {
        let v = self.value(a).data().iter().map(|x| x * x).sum();
        let tracked = self.tracked(a);
        self.push(DenseMatrix::filled(1, 1, v), Op::SumSquares(a), tracked)
    }

    /// Nuclear norm with the subgradient `U V^T`.
    pub fn nuclear_norm(&mut self, a: Var) -> Var {
        let svd = svd_thin(self.value(a));
        let sub = svd.u.matmul_t(&svd.v).expect("thin svd shapes");
        let tracked = self.tracked(a);
        self.push(
            DenseMatrix::filled(1, 1, svd.nuclear_norm()),
            Op::Nuclear(a, sub),
            tracked,
        )
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let tracked = self.tracked(a);
        self.push(value, Op::Transpose(a), tracked)
    }

    /// Each row scaled to unit Euclidean norm; zero rows stay zero.
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let norms: Vec<f64> = (0..av.rows()).map(|i| dot(av.row(i), av.row(i)).sqrt()).collect();
        let value = DenseMatrix::from_fn(av.rows(), av.cols(), |i, j| {
            if norms[i] > 1e-300 {
                av.get(i, j) / norms[i]
            } else {
                0.0
            }
        });
        let tracked = self.tracked(a);
        self.push(value, Op::RowNormalize(a, norms), tracked)
    }

    /// `D_ij = ||y_i - y_j||^2` for the rows of `y`.
    pub fn pairwise_sq_dist(&mut self, y: Var) -> Var {
        let yv = self.value(y);
        let n = yv.rows();
        let norms: Vec<f64> = (0..n).map(|i| dot(yv.row(i), yv.row(i))).collect();
        let gram = yv.matmul_t(yv).expect("gram shape");
        let value = DenseMatrix::from_fn(n, n, |i, j| {
            if i == j {
                0.0
            } else {
                (norms[i] + norms[j] - 2.0 * gram.get(i, j)).max(0.0)
            }
        });
        let tracked = self.tracked(y);
        self.push(value, Op::PairwiseSqDist(y), tracked)
    }

    /// `D^{-1/2} A D^{-1/2}` with `D` the row sums of `A`; rows with
    /// nonpositive sum are zeroed.
    pub fn sym_normalize(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if !av.is_square() {
            return Err(shape_err("sym_normalize", av.shape(), av.shape()));
        }
        let dinv: Vec<f64> = av.row_sums().iter().map(|&d| inv_sqrt_degree(d)).collect();
        let n = av.rows();
        let value = DenseMatrix::from_fn(n, n, |i, j| dinv[i] * av.get(i, j) * dinv[j]);
        let tracked = self.tracked(a);
        Ok(self.push(value, Op::SymNormalize(a, dinv), tracked))
    }

    /// Edge column `e_k = s[i_k] + sign * t[j_k]` over `pattern`'s entries.
    pub fn gather_pairs(&mut self, s: Var, t: Var, pattern: Arc<SparseMatrix>, sign: f64) -> Result<Var> {
        let (sv, tv) = (self.value(s), self.value(t));
        let n = pattern.rows();
        if sv.shape() != (n, 1) || tv.shape() != (pattern.cols(), 1) {
            return Err(shape_err("gather_pairs", sv.shape(), tv.shape()));
        }
        let mut out = Vec::with_capacity(pattern.nnz());
        for (i, j, _) in pattern.iter() {
            out.push(sv.get(i, 0) + sign * tv.get(j, 0));
        }
        let value = DenseMatrix::from_vec(out.len(), 1, out)?;
        let tracked = self.tracked(s) || self.tracked(t);
        Ok(self.push(value, Op::GatherPairs { s, t, pattern, sign }, tracked))
    }

    /// Edge column `e_k = z[i_k] . z[j_k]`.
    pub fn gather_gram(&mut self, z: Var, pattern: Arc<SparseMatrix>) -> Result<Var> {
        let zv = self.value(z);
        if zv.rows() != pattern.rows() || pattern.rows() != pattern.cols() {
            return Err(shape_err("gather_gram", zv.shape(), pattern.shape()));
        }
        let out: Vec<f64> = pattern.iter().map(|(i, j, _)| dot(zv.row(i), zv.row(j))).collect();
        let value = DenseMatrix::from_vec(out.len(), 1, out)?;
        let tracked = self.tracked(z);
        Ok(self.push(value, Op::GatherGram { z, pattern }, tracked))
    }

    /// Per-row softmax of edge scores, weighted by the pattern's stored values:
    /// `y_k = w_k exp(e_k) / sum_{k' in row} w_k' exp(e_k')`.
    pub fn edge_softmax(&mut self, e: Var, pattern: Arc<SparseMatrix>) -> Result<Var> {
        let ev = self.value(e);
        if ev.shape() != (pattern.nnz(), 1) {
            return Err(shape_err("edge_softmax", ev.shape(), (pattern.nnz(), 1)));
        }
        let mut out = vec![0.0; pattern.nnz()];
        for i in 0..pattern.rows() {
            let off = pattern.row_offset(i);
            let (_, prior) = pattern.row(i);
            if prior.is_empty() {
                continue;
            }
            let scores = &ev.data()[off..off + prior.len()];
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (k, (&s, &w)) in scores.iter().zip(prior).enumerate() {
                let v = w * (s - max).exp();
                out[off + k] = v;
                total += v;
            }
            if total > 0.0 {
                for v in &mut out[off..off + prior.len()] {
                    *v /= total;
                }
            }
        }
        let value = DenseMatrix::from_vec(out.len(), 1, out)?;
        let tracked = self.tracked(e);
        Ok(self.push(value, Op::EdgeSoftmax { e, pattern }, tracked))
    }

    /// `D^{-1/2} W D^{-1/2}` for edge weights `w` on `pattern`, `D` the row
    /// sums of `W`.
    pub fn edge_sym_normalize(&mut self, w: Var, pattern: Arc<SparseMatrix>) -> Result<Var> {
        let wv = self.value(w);
        if wv.shape() != (pattern.nnz(), 1) {
            return Err(shape_err("edge_sym_normalize", wv.shape(), (pattern.nnz(), 1)));
        }
        let n = pattern.rows();
        let mut degree = vec![0.0; n];
        for (i, d) in degree.iter_mut().enumerate() {
            let off = pattern.row_offset(i);
            *d = wv.data()[off..off + pattern.row(i).0.len()].iter().sum();
        }
        let dinv: Vec<f64> = degree.iter().map(|&d| inv_sqrt_degree(d)).collect();
        let out: Vec<f64> = pattern
            .iter()
            .zip(wv.data())
            .map(|((i, j, _), &x)| dinv[i] * x * dinv[j])
            .collect();
        let value = DenseMatrix::from_vec(out.len(), 1, out)?;
        let tracked = self.tracked(w);
        Ok(self.push(value, Op::EdgeSymNormalize { w, pattern, dinv }, tracked))
    }

    /// `W h` where `W` has `pattern`'s sparsity and values from edge column `w`.
    pub fn edge_spmm(&mut self, w: Var, pattern: Arc<SparseMatrix>, h: Var) -> Result<Var> {
        let (wv, hv) = (self.value(w), self.value(h));
        if wv.shape() != (pattern.nnz(), 1) || hv.rows() != pattern.cols() {
            return Err(shape_err("edge_spmm", wv.shape(), hv.shape()));
        }
        let weighted = pattern.with_values(wv.data().to_vec());
        let value = weighted.matmul_dense(hv)?;
        let tracked = self.tracked(w) || self.tracked(h);
        Ok(self.push(value, Op::EdgeSpMM { w, pattern, h }, tracked))
    }

    /// Mean negative log-probability of the labeled class over `mask`, with
    /// probabilities floored at [`PROB_FLOOR`].
    pub fn masked_nll(&mut self, z: Var, labels: Arc<Vec<usize>>, mask: Arc<Vec<usize>>) -> Result<Var> {
        if mask.is_empty() {
            return Err(Error::contract("masked_nll", "empty mask"));
        }
        let zv = self.value(z);
        let mut total = 0.0;
        let mut hits = 0;
        for &i in mask.iter() {
            let p = zv.get(i, labels[i]);
            if p < PROB_FLOOR {
                hits += 1;
            }
            total -= p.max(PROB_FLOOR).ln();
        }
        self.floor_hits += hits;
        let value = DenseMatrix::filled(1, 1, total / mask.len() as f64);
        let tracked = self.tracked(z);
        Ok(self.push(value, Op::MaskedNll { z, labels, mask }, tracked))
    }
}

#[inline]
fn inv_sqrt_degree(d: f64) -> f64 {
    if d > 1e-300 {
        1.0 / d.sqrt()
    } else {
        0.0
    }
}

/// Gradients of a scalar output with respect to every tracked node.
pub struct Gradients {
    grads: Vec<Option<DenseMatrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&DenseMatrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` when `v` did not affect
    /// the output.
    pub fn get_or_zeros(&self, v: Var, like: &DenseMatrix) -> DenseMatrix {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| DenseMatrix::zeros(like.rows(), like.cols()))
    }
}

fn accumulate(slot: &mut Option<DenseMatrix>, g: DenseMatrix) {
    match slot {
        Some(existing) => existing.axpy(1.0, &g).expect("gradient shape"),
        None => *slot = Some(g),
    }
}

/// Reverse accumulation from the scalar node `output`.
pub fn gradients(tape: &Tape, output: Var) -> Result<Gradients> {
    let out_shape = tape.value(output).shape();
    if out_shape != (1, 1) {
        return Err(Error::contract(
            "gradients",
            format!("output must be scalar, got {out_shape:?}"),
        ));
    }
    let mut grads: Vec<Option<DenseMatrix>> = (0..tape.nodes.len()).map(|_| None).collect();
    grads[output.0] = Some(DenseMatrix::filled(1, 1, 1.0));

    for idx in (0..=output.0).rev() {
        let node = &tape.nodes[idx];
        if !node.tracked {
            continue;
        }
        let Some(g) = grads[idx].take() else { continue };
        let val = &node.value;
        let tracked = |v: Var| tape.nodes[v.0].tracked;
        let value = |v: Var| &tape.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {
                grads[idx] = Some(g);
                continue;
            }
            Op::MatMul(a, b) => {
                if tracked(*a) {
                    accumulate(&mut grads[a.0], g.matmul_t(value(*b))?);
                }
                if tracked(*b) {
                    accumulate(&mut grads[b.0], value(*a).t_matmul(&g)?);
                }
            }
            Op::SparseMatMul(s, b) => {
                accumulate(&mut grads[b.0], s.t_matmul_dense(&g)?);
            }
            Op::Add(a, b) => {
                if tracked(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if tracked(*b) {
                    accumulate(&mut grads[b.0], g);
                }
            }
            Op::Sub(a, b) => {
                if tracked(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if tracked(*b) {
                    accumulate(&mut grads[b.0], g.scale(-1.0));
                }
            }
            Op::Mul(a, b) => {
                if tracked(*a) {
                    accumulate(&mut grads[a.0], g.hadamard(value(*b))?);
                }
                if tracked(*b) {
                    accumulate(&mut grads[b.0], g.hadamard(value(*a))?);
                }
            }
            Op::Scale(a, s) => accumulate(&mut grads[a.0], g.scale(*s)),
            Op::Relu(a) => {
                let d = g.zip_map(value(*a), |gi, x| if x > 0.0 { gi } else { 0.0 })?;
                accumulate(&mut grads[a.0], d);
            }
            Op::LeakyRelu(a, slope) => {
                let d = g.zip_map(value(*a), |gi, x| if x >= 0.0 { gi } else { slope * gi })?;
                accumulate(&mut grads[a.0], d);
            }
            Op::Exp(a) => accumulate(&mut grads[a.0], g.hadamard(val)?),
            Op::Abs(a) => {
                let d = g.zip_map(value(*a), |gi, x| gi * sign(x))?;
                accumulate(&mut grads[a.0], d);
            }
            Op::RowSoftmax(a) => {
                let mut d = DenseMatrix::zeros(val.rows(), val.cols());
                for i in 0..val.rows() {
                    let (y, gr) = (val.row(i), g.row(i));
                    let inner = dot(y, gr);
                    for (o, (&yi, &gi)) in d.row_mut(i).iter_mut().zip(y.iter().zip(gr)) {
                        *o = yi * (gi - inner);
                    }
                }
                accumulate(&mut grads[a.0], d);
            }
            Op::Sum(a) => {
                let (r, c) = value(*a).shape();
                accumulate(&mut grads[a.0], DenseMatrix::filled(r, c, g.get(0, 0)));
            }
            Op::SumSquares(a) => {
                accumulate(&mut grads[a.0], value(*a).scale(2.0 * g.get(0, 0)));
            }
            Op::Nuclear(a, sub) => accumulate(&mut grads[a.0], sub.scale(g.get(0, 0))),
            Op::Transpose(a) => accumulate(&mut grads[a.0], g.transpose()),
            Op::RowNormalize(a, norms) => {
                let mut d = DenseMatrix::zeros(val.rows(), val.cols());
                for (i, &norm) in norms.iter().enumerate() {
                    if norm <= 1e-300 {
                        continue;
                    }
                    let proj = dot(val.row(i), g.row(i));
                    for (j, out) in d.row_mut(i).iter_mut().enumerate() {
                        *out = (g.get(i, j) - val.get(i, j) * proj) / norm;
                    }
                }
                accumulate(&mut grads[a.0], d);
            }
            Op::PairwiseSqDist(y) => {
                let yv = value(*y);
                let n = yv.rows();
                let sym = DenseMatrix::from_fn(n, n, |i, j| {
                    if i == j {
                        0.0
                    } else {
                        g.get(i, j) + g.get(j, i)
                    }
                });
                let row_tot = sym.row_sums();
                let sy = sym.matmul(yv)?;
                let mut d = DenseMatrix::zeros(n, yv.cols());
                for i in 0..n {
                    for c in 0..yv.cols() {
                        d.set(i, c, 2.0 * (row_tot[i] * yv.get(i, c) - sy.get(i, c)));
                    }
                }
                accumulate(&mut grads[y.0], d);
            }
            Op::SymNormalize(a, dinv) => {
                let n = val.rows();
                let mut gd = vec![0.0; n];
                for k in 0..n {
                    if dinv[k] == 0.0 {
                        continue;
                    }
                    let mut s = 0.0;
                    for j in 0..n {
                        s += g.get(k, j) * val.get(k, j) + g.get(j, k) * val.get(j, k);
                    }
                    // -1/(2 d_k) = -dinv_k^2 / 2
                    gd[k] = -0.5 * dinv[k] * dinv[k] * s;
                }
                let d = DenseMatrix::from_fn(n, n, |i, j| g.get(i, j) * dinv[i] * dinv[j] + gd[i]);
                accumulate(&mut grads[a.0], d);
            }
            Op::GatherPairs { s, t, pattern, sign } => {
                let n = pattern.rows();
                let mut gs = vec![0.0; n];
                let mut gt = vec![0.0; pattern.cols()];
                for ((i, j, _), &gk) in pattern.iter().zip(g.data()) {
                    gs[i] += gk;
                    gt[j] += sign * gk;
                }
                if tracked(*s) {
                    accumulate(&mut grads[s.0], DenseMatrix::from_vec(n, 1, gs)?);
                }
                if tracked(*t) {
                    accumulate(&mut grads[t.0], DenseMatrix::from_vec(pattern.cols(), 1, gt)?);
                }
            }
            Op::GatherGram { z, pattern } => {
                let zv = value(*z);
                let mut d = DenseMatrix::zeros(zv.rows(), zv.cols());
                for ((i, j, _), &gk) in pattern.iter().zip(g.data()) {
                    if gk == 0.0 {
                        continue;
                    }
                    for c in 0..zv.cols() {
                        d.add_at(i, c, gk * zv.get(j, c));
                        d.add_at(j, c, gk * zv.get(i, c));
                    }
                }
                accumulate(&mut grads[z.0], d);
            }
            Op::EdgeSoftmax { e, pattern } => {
                let mut d = vec![0.0; pattern.nnz()];
                for i in 0..pattern.rows() {
                    let off = pattern.row_offset(i);
                    let len = pattern.row(i).0.len();
                    let y = &val.data()[off..off + len];
                    let gr = &g.data()[off..off + len];
                    let inner = dot(y, gr);
                    for k in 0..len {
                        d[off + k] = y[k] * (gr[k] - inner);
                    }
                }
                accumulate(&mut grads[e.0], DenseMatrix::from_vec(d.len(), 1, d)?);
            }
            Op::EdgeSymNormalize { w, pattern, dinv } => {
                let n = pattern.rows();
                let mut s = vec![0.0; n];
                for ((i, j, _), (&gk, &yk)) in pattern.iter().zip(g.data().iter().zip(val.data())) {
                    s[i] += gk * yk;
                    s[j] += gk * yk;
                }
                let gd: Vec<f64> = (0..n).map(|k| -0.5 * dinv[k] * dinv[k] * s[k]).collect();
                let d: Vec<f64> = pattern
                    .iter()
                    .zip(g.data())
                    .map(|((i, j, _), &gk)| {
                        if dinv[i] == 0.0 {
                            0.0
                        } else {
                            gk * dinv[i] * dinv[j] + gd[i]
                        }
                    })
                    .collect();
                accumulate(&mut grads[w.0], DenseMatrix::from_vec(d.len(), 1, d)?);
            }
            Op::EdgeSpMM { w, pattern, h } => {
                let (wv, hv) = (value(*w), value(*h));
                if tracked(*w) {
                    let d: Vec<f64> = pattern.iter().map(|(i, j, _)| dot(g.row(i), hv.row(j))).collect();
                    accumulate(&mut grads[w.0], DenseMatrix::from_vec(d.len(), 1, d)?);
                }
                if tracked(*h) {
                    let weighted = pattern.with_values(wv.data().to_vec());
                    accumulate(&mut grads[h.0], weighted.t_matmul_dense(&g)?);
                }
            }
            Op::MaskedNll { z, labels, mask } => {
                let zv = value(*z);
                let mut d = DenseMatrix::zeros(zv.rows(), zv.cols());
                let scale = g.get(0, 0) / mask.len() as f64;
                for &i in mask.iter() {
                    let p = zv.get(i, labels[i]);
                    if p >= PROB_FLOOR {
                        d.add_at(i, labels[i], -scale / p);
                    }
                }
                accumulate(&mut grads[z.0], d);
            }
        }
    }
    Ok(Gradients { grads })
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Softmax of each row in place; exposed for prediction paths that do not
/// need a tape.
pub fn softmax_rows(m: &mut DenseMatrix) {
    for i in 0..m.rows() {
        let row = m.row(i).to_vec();
        softmax_into(&row, m.row_mut(i));
    }
}
