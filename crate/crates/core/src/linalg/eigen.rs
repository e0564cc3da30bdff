//! Dense symmetric eigensolver.
//!
//! The matrix is reduced to tridiagonal form with Householder reflectors,
//! eigenvalues come from implicit-shift QL on the tridiagonal, and
//! eigenvectors either from accumulating the QL rotations (all of them) or
//! from inverse iteration on the tridiagonal followed by back-transformation
//! (only the requested ones). Output eigenvalues are ascending and each
//! eigenvector is signed so that its largest-magnitude component is positive.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::DenseMatrix;
use crate::error::{Error, Result};
use crate::par;

/// Above this size, partial requests go through inverse iteration instead of
/// accumulating the full eigenvector matrix.
const FULL_ACCUMULATION_MAX_N: usize = 160;

/// Eigenvalues in ascending order with matching eigenvector columns.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: DenseMatrix,
}

struct Tridiagonal {
    diag: Vec<f64>,
    /// `off[i]` couples rows `i` and `i + 1`; `off[n - 1] == 0`.
    off: Vec<f64>,
    /// Householder vectors (leading 1 implicit in `v[0] == 1.0`) acting on
    /// indices `i + 1..n`, with their scale factors.
    reflectors: Vec<(f64, Vec<f64>)>,
}

fn check_symmetric(op: &'static str, m: &DenseMatrix) -> Result<()> {
    if !m.is_square() {
        return Err(Error::contract(op, format!("{}x{} is not square", m.rows(), m.cols())));
    }
    let tol = 1e-10 * m.max_abs().max(1.0);
    let asym = m.asymmetry();
    if asym > tol {
        return Err(Error::contract(op, format!("matrix asymmetric by {asym:e}")));
    }
    if !m.is_finite() {
        return Err(Error::contract(op, "non-finite entries"));
    }
    Ok(())
}

/// All eigenpairs of a symmetric matrix.
pub fn eig_sym(m: &DenseMatrix) -> Result<SymmetricEigen> {
    check_symmetric("eig_sym", m)?;
    let n = m.rows();
    let tri = tridiagonalize(m);
    let mut q = form_q(&tri, n);
    let mut d = tri.diag.clone();
    let mut e = tri.off.clone();
    ql_implicit(&mut d, &mut e, Some(&mut q));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    let values = order.iter().map(|&i| d[i]).collect();
    let mut vectors = DenseMatrix::zeros(n, n);
    for (c, &src) in order.iter().enumerate() {
        let mut col = q.column(src);
        fix_sign(&mut col);
        vectors.set_column(c, &col);
    }
    Ok(SymmetricEigen { values, vectors })
}

/// The `p` smallest eigenvalues (ascending) and their eigenvectors as an
/// `n x p` column-orthonormal matrix.
pub fn eig_sym_smallest(m: &DenseMatrix, p: usize) -> Result<(Vec<f64>, DenseMatrix)> {
    check_symmetric("eig_sym_smallest", m)?;
    let n = m.rows();
    if p == 0 || p > n {
        return Err(Error::contract(
            "eig_sym_smallest",
            format!("requested {p} eigenpairs of a {n}x{n} matrix"),
        ));
    }
    if n <= FULL_ACCUMULATION_MAX_N || 4 * p > n {
        let full = eig_sym(m)?;
        return Ok((full.values[..p].to_vec(), full.vectors.leading_columns(p)));
    }
    selective_smallest(m, p)
}

fn selective_smallest(m: &DenseMatrix, p: usize) -> Result<(Vec<f64>, DenseMatrix)> {
    let n = m.rows();
    let tri = tridiagonalize(m);
    let norm = tri
        .diag
        .iter()
        .zip(&tri.off)
        .fold(0.0f64, |acc, (d, e)| acc.max(d.abs() + 2.0 * e.abs()))
        .max(f64::MIN_POSITIVE);

    // Split into unreduced blocks and find every eigenvalue of each block.
    let mut candidates: Vec<(f64, usize, usize)> = Vec::with_capacity(n);
    let mut start = 0;
    for i in 0..n {
        let is_break = i == n - 1
            || tri.off[i].abs() <= f64::EPSILON * (tri.diag[i].abs() + tri.diag[i + 1].abs());
        if is_break {
            let end = i + 1;
            let mut d = tri.diag[start..end].to_vec();
            let mut e = tri.off[start..end].to_vec();
            *e.last_mut().unwrap() = 0.0;
            ql_implicit(&mut d, &mut e, None);
            candidates.extend(d.into_iter().map(|v| (v, start, end)));
            start = end;
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
    candidates.truncate(p);

    // Inverse iteration per selected eigenvalue, reorthogonalizing within
    // clusters of close eigenvalues in the same block.
    let cluster_tol = 1e-3 * norm;
    let mut tri_vectors: Vec<Vec<f64>> = Vec::with_capacity(p);
    for (idx, &(lambda, s, e)) in candidates.iter().enumerate() {
        let cluster: Vec<usize> = (0..idx)
            .filter(|&j| {
                let (lj, sj, _) = candidates[j];
                sj == s && (lambda - lj).abs() <= cluster_tol
            })
            .collect();
        let block_vec = inverse_iteration(
            &tri.diag[s..e],
            &tri.off[s..e - 1],
            lambda,
            norm,
            idx as u64,
            &cluster
                .iter()
                .map(|&j| &tri_vectors[j][s..e])
                .collect::<Vec<_>>(),
        );
        let mut full = vec![0.0; n];
        full[s..e].copy_from_slice(&block_vec);
        tri_vectors.push(full);
    }

    let back: Vec<Vec<f64>> = par::map_slice(&tri_vectors, |y| apply_q(&tri, y));
    let mut vectors = DenseMatrix::zeros(n, p);
    let mut cols = back;
    orthonormalize(&mut cols);
    for (c, col) in cols.iter_mut().enumerate() {
        fix_sign(col);
        vectors.set_column(c, col);
    }
    let values = candidates.iter().map(|c| c.0).collect();
    Ok((values, vectors))
}

/// Householder reduction `A = Q T Q^T`, the reflectors stored for later
/// application. Work is on a full symmetric copy; the rank-2 update is
/// row-parallel.
fn tridiagonalize(m: &DenseMatrix) -> Tridiagonal {
    let n = m.rows();
    let mut a = m.clone();
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n];
    let mut reflectors = Vec::with_capacity(n.saturating_sub(1));

    for i in 0..n.saturating_sub(1) {
        let len = n - i - 1;
        let mut x: Vec<f64> = (i + 1..n).map(|r| a.get(r, i)).collect();
        let (beta, tau) = householder(&mut x);
        off[i] = beta;
        diag[i] = a.get(i, i);
        if tau != 0.0 && len > 1 {
            let v = &x;
            // p = tau * A22 v
            let trailing = i + 1;
            let mut pvec = vec![0.0; len];
            par::for_each_row(&mut pvec, 1, |r, out| {
                let row = &a.row(trailing + r)[trailing..];
                out[0] = tau * super::dense::dot(row, v);
            });
            let pv = super::dense::dot(&pvec, v);
            let w: Vec<f64> = pvec
                .iter()
                .zip(v)
                .map(|(&pi, &vi)| pi - 0.5 * tau * pv * vi)
                .collect();
            let cols = a.cols();
            let data = a.data_mut();
            let trailing_rows = &mut data[trailing * cols..];
            par::for_each_row(trailing_rows, cols, |r, row| {
                let (vr, wr) = (v[r], w[r]);
                for (c, out) in row[trailing..].iter_mut().enumerate() {
                    *out -= vr * w[c] + wr * v[c];
                }
            });
        }
        reflectors.push((tau, x));
    }
    if n > 0 {
        diag[n - 1] = a.get(n - 1, n - 1);
        off[n - 1] = 0.0;
    }
    Tridiagonal {
        diag,
        off,
        reflectors,
    }
}

/// Overwrites `x` with the Householder vector `v` (`v[0] = 1`) such that
/// `(I - tau v v^T) x = beta e_1`. Returns `(beta, tau)`.
fn householder(x: &mut [f64]) -> (f64, f64) {
    let alpha = x[0];
    let tail_norm = x[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
    if tail_norm == 0.0 {
        x[0] = 1.0;
        for v in &mut x[1..] {
            *v = 0.0;
        }
        return (alpha, 0.0);
    }
    let beta = -alpha.signum() * alpha.hypot(tail_norm);
    let beta = if alpha == 0.0 { -tail_norm } else { beta };
    let tau = (beta - alpha) / beta;
    let scale = 1.0 / (alpha - beta);
    x[0] = 1.0;
    for v in &mut x[1..] {
        *v *= scale;
    }
    (beta, tau)
}

/// `Q y` where `Q = H_0 H_1 ... H_{n-2}`.
fn apply_q(tri: &Tridiagonal, y: &[f64]) -> Vec<f64> {
    let mut out = y.to_vec();
    for (i, (tau, v)) in tri.reflectors.iter().enumerate().rev() {
        if *tau == 0.0 {
            continue;
        }
        let seg = &mut out[i + 1..];
        let s = tau * super::dense::dot(v, seg);
        for (o, &vi) in seg.iter_mut().zip(v) {
            *o -= s * vi;
        }
    }
    out
}

fn form_q(tri: &Tridiagonal, n: usize) -> DenseMatrix {
    // Build Q^T row by row: row j of Q^T is (Q e_j)^T... Q is formed by applying
    // the reflectors to the identity from the last one backwards.
    let mut q = DenseMatrix::identity(n);
    for (i, (tau, v)) in tri.reflectors.iter().enumerate().rev() {
        if *tau == 0.0 {
            continue;
        }
        // Q[i+1.., :] -= tau v (v^T Q[i+1.., :])
        let mut proj = vec![0.0; n];
        for (r, &vr) in v.iter().enumerate() {
            for (p, &qv) in proj.iter_mut().zip(q.row(i + 1 + r)) {
                *p += vr * qv;
            }
        }
        let cols = q.cols();
        let data = q.data_mut();
        par::for_each_row(&mut data[(i + 1) * cols..], cols, |r, row| {
            let s = tau * v[r];
            if s != 0.0 {
                for (o, &p) in row.iter_mut().zip(&proj) {
                    *o -= s * p;
                }
            }
        });
    }
    q
}

/// Implicit-shift QL on a symmetric tridiagonal matrix. On return `d` holds
/// the (unsorted) eigenvalues; when `vectors` is given, the rotations are
/// accumulated into its columns.
fn ql_implicit(d: &mut [f64], e: &mut [f64], mut vectors: Option<&mut DenseMatrix>) {
    let n = d.len();
    if n == 0 {
        return;
    }
    e[n - 1] = 0.0;
    let eps = f64::EPSILON;
    let mut f = 0.0;
    let mut tst1 = 0.0f64;
    let mut rotations: Vec<(usize, f64, f64)> = Vec::new();
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().take(n).skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                rotations.clear();
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    rotations.push((i, c, s));
                }
                if let Some(v) = vectors.as_deref_mut() {
                    let cols = v.cols();
                    par::for_each_row(v.data_mut(), cols, |_, row| {
                        for &(i, c, s) in &rotations {
                            let h = row[i + 1];
                            row[i + 1] = s * row[i] + c * h;
                            row[i] = c * row[i] - s * h;
                        }
                    });
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 || iter > 60 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
}

/// Eigenvector of the unreduced tridiagonal `(diag, off)` for the eigenvalue
/// `lambda`, orthogonal to the given cluster vectors.
fn inverse_iteration(
    diag: &[f64],
    off: &[f64],
    lambda: f64,
    norm: f64,
    seed: u64,
    cluster: &[&[f64]],
) -> Vec<f64> {
    let n = diag.len();
    if n == 1 {
        return vec![1.0];
    }
    let lu = TridiagLu::factor(diag, off, lambda, norm);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed ^ seed);
    let mut x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    for _ in 0..4 {
        project_out(&mut x, cluster);
        normalize(&mut x);
        lu.solve(&mut x);
        project_out(&mut x, cluster);
        normalize(&mut x);
    }
    project_out(&mut x, cluster);
    normalize(&mut x);
    x
}

/// LU factorization with partial pivoting of `T - lambda I`.
struct TridiagLu {
    u0: Vec<f64>,
    u1: Vec<f64>,
    u2: Vec<f64>,
    mult: Vec<f64>,
    swapped: Vec<bool>,
}

impl TridiagLu {
    fn factor(diag: &[f64], off: &[f64], lambda: f64, norm: f64) -> Self {
        let n = diag.len();
        let tiny = f64::EPSILON * norm;
        let mut u0 = vec![0.0; n];
        let mut u1 = vec![0.0; n];
        let mut u2 = vec![0.0; n];
        let mut mult = vec![0.0; n];
        let mut swapped = vec![false; n];
        let mut cur = (diag[0] - lambda, off[0], 0.0);
        for k in 0..n - 1 {
            let next = (
                off[k],
                diag[k + 1] - lambda,
                if k + 1 < n - 1 { off[k + 1] } else { 0.0 },
            );
            let (mut pivot, other) = if cur.0.abs() >= next.0.abs() {
                (cur, next)
            } else {
                swapped[k] = true;
                (next, cur)
            };
            if pivot.0 == 0.0 {
                pivot.0 = tiny;
            }
            u0[k] = pivot.0;
            u1[k] = pivot.1;
            u2[k] = pivot.2;
            let m = other.0 / pivot.0;
            mult[k] = m;
            cur = (other.1 - m * pivot.1, other.2 - m * pivot.2, 0.0);
        }
        u0[n - 1] = if cur.0 == 0.0 { tiny } else { cur.0 };
        Self {
            u0,
            u1,
            u2,
            mult,
            swapped,
        }
    }

    fn solve(&self, b: &mut [f64]) {
        let n = b.len();
        for k in 0..n - 1 {
            if self.swapped[k] {
                b.swap(k, k + 1);
            }
            b[k + 1] -= self.mult[k] * b[k];
        }
        b[n - 1] /= self.u0[n - 1];
        if n >= 2 {
            b[n - 2] = (b[n - 2] - self.u1[n - 2] * b[n - 1]) / self.u0[n - 2];
        }
        for k in (0..n.saturating_sub(2)).rev() {
            b[k] = (b[k] - self.u1[k] * b[k + 1] - self.u2[k] * b[k + 2]) / self.u0[k];
        }
        // Rescale to keep magnitudes bounded between iterations.
        let big = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if big > 0.0 && big.is_finite() {
            for v in b.iter_mut() {
                *v /= big;
            }
        }
    }
}

fn project_out(x: &mut [f64], basis: &[&[f64]]) {
    for _ in 0..2 {
        for b in basis {
            let s = super::dense::dot(x, b);
            for (xi, &bi) in x.iter_mut().zip(b.iter()) {
                *xi -= s * bi;
            }
        }
    }
}

fn normalize(x: &mut [f64]) {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in x.iter_mut() {
            *v /= norm;
        }
    }
}

/// Two passes of modified Gram-Schmidt.
fn orthonormalize(cols: &mut [Vec<f64>]) {
    for _ in 0..2 {
        for j in 0..cols.len() {
            let (done, rest) = cols.split_at_mut(j);
            let cj = &mut rest[0];
            for prev in done.iter() {
                let s = super::dense::dot(cj, prev);
                for (x, &b) in cj.iter_mut().zip(prev) {
                    *x -= s * b;
                }
            }
            normalize(cj);
        }
    }
}

/// Makes the largest-magnitude component (first on ties) positive.
pub(crate) fn fix_sign(v: &mut [f64]) {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}
