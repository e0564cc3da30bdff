use super::dense::dot;
use super::DenseMatrix;

/// Thin singular value decomposition `m = U diag(s) V^T` with `k = min(rows,
/// cols)` columns in `U` and `V`.
#[derive(Clone, Debug)]
pub struct ThinSvd {
    pub u: DenseMatrix,
    pub singular_values: Vec<f64>,
    pub v: DenseMatrix,
}

impl ThinSvd {
    pub fn nuclear_norm(&self) -> f64 {
        self.singular_values.iter().sum()
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (j, s) in self.singular_values.iter().enumerate() {
                us.set(i, j, us.get(i, j) * s);
            }
        }
        us.matmul_t(&self.v).expect("consistent thin svd shapes")
    }
}

/// One-sided (Hestenes) Jacobi SVD.
pub fn svd_thin(m: &DenseMatrix) -> ThinSvd {
    if m.rows() < m.cols() {
        let t = svd_thin(&m.transpose());
        return ThinSvd {
            u: t.v,
            singular_values: t.singular_values,
            v: t.u,
        };
    }
    let (rows, cols) = m.shape();
    // Work on columns of m as contiguous vectors.
    let mut a: Vec<Vec<f64>> = (0..cols).map(|j| m.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|j| {
            let mut e = vec![0.0; cols];
            e[j] = 1.0;
            e
        })
        .collect();

    let tol = 1e-15;
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                let gamma = dot(&a[p], &a[q]);
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut sigma: Vec<f64> = a.iter().map(|col| dot(col, col).sqrt()).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&x, &y| sigma[y].total_cmp(&sigma[x]));

    let scale = sigma.iter().copied().fold(0.0f64, f64::max);
    let zero_tol = scale * (rows.max(cols) as f64) * f64::EPSILON;
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(cols);
    let mut v_cols: Vec<Vec<f64>> = Vec::with_capacity(cols);
    let mut values = Vec::with_capacity(cols);
    let mut deficient = Vec::new();
    for &j in &order {
        if sigma[j] > zero_tol && sigma[j] > 0.0 {
            u_cols.push(a[j].iter().map(|x| x / sigma[j]).collect());
        } else {
            sigma[j] = 0.0;
            deficient.push(u_cols.len());
            u_cols.push(vec![0.0; rows]);
        }
        v_cols.push(v[j].clone());
        values.push(sigma[j]);
    }
    complete_basis(&mut u_cols, &deficient);

    let mut u = DenseMatrix::zeros(rows, cols);
    let mut vm = DenseMatrix::zeros(cols, cols);
    for (j, (uc, vc)) in u_cols.iter().zip(&v_cols).enumerate() {
        u.set_column(j, uc);
        vm.set_column(j, vc);
    }
    ThinSvd {
        u,
        singular_values: values,
        v: vm,
    }
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let (cp, cq) = (&mut left[p], &mut right[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Fills the listed (zero) columns with unit vectors orthogonal to the rest.
fn complete_basis(cols: &mut [Vec<f64>], missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let rows = cols[0].len();
    let mut candidate = 0usize;
    for &slot in missing {
        loop {
            let mut e = vec![0.0; rows];
            e[candidate % rows] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for (k, other) in cols.iter().enumerate() {
                    if k == slot || other.iter().all(|&x| x == 0.0) {
                        continue;
                    }
                    let s = dot(&e, other);
                    for (x, &o) in e.iter_mut().zip(other) {
                        *x -= s * o;
                    }
                }
            }
            let norm = dot(&e, &e).sqrt();
            if norm > 1e-8 {
                cols[slot] = e.iter().map(|x| x / norm).collect();
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn check(m: &DenseMatrix) -> ThinSvd {
        let svd = svd_thin(m);
        let k = m.rows().min(m.cols());
        let tol = 1e-8 * m.frobenius_norm().max(f64::MIN_POSITIVE);
        assert!(svd.reconstruct().sub(m).unwrap().frobenius_norm() <= tol.max(1e-300));
        let eye = DenseMatrix::identity(k);
        assert!(svd.u.t_matmul(&svd.u).unwrap().max_abs_diff(&eye) <= 1e-10);
        assert!(svd.v.t_matmul(&svd.v).unwrap().max_abs_diff(&eye) <= 1e-10);
        assert!(svd.singular_values.windows(2).all(|w| w[0] >= w[1]));
        assert!(svd.singular_values.iter().all(|&s| s >= 0.0));
        svd
    }

    #[test]
    fn identity_and_permutation() {
        let svd = check(&DenseMatrix::identity(2));
        assert_eq!(svd.singular_values, vec![1.0, 1.0]);
        let svd = check(&DenseMatrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]));
        assert!((svd.nuclear_norm() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn random_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (r, c) in [(3, 3), (5, 2), (2, 6), (7, 7)] {
            let m = DenseMatrix::from_fn(r, c, |_, _| rng.gen_range(-3.0..3.0));
            check(&m);
        }
    }

    #[test]
    fn rank_deficient_keeps_orthonormal_factors() {
        let m = DenseMatrix::from_rows(&[[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 0.0, 0.0]]);
        let svd = check(&m);
        assert!(svd.singular_values[1] == 0.0 && svd.singular_values[2] == 0.0);
        check(&DenseMatrix::zeros(3, 2));
    }
}
