//! Graph-matrix algebra over weighted adjacency matrices.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, SparseMatrix};

/// Nonnegative weighted graph with no stored self-loops.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjacencyMatrix {
    weights: SparseMatrix,
    symmetric: bool,
}

impl AdjacencyMatrix {
    /// Wraps `weights`, rejecting negative, non-finite or diagonal entries.
    pub fn new(weights: SparseMatrix) -> Result<Self> {
        if weights.rows() != weights.cols() {
            return Err(Error::shape(
                "AdjacencyMatrix::new",
                format!("{}x{} is not square", weights.rows(), weights.cols()),
            ));
        }
        for (i, j, v) in weights.iter() {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::contract(
                    "AdjacencyMatrix::new",
                    format!("weight {v} at ({i}, {j})"),
                ));
            }
            if i == j {
                return Err(Error::contract(
                    "AdjacencyMatrix::new",
                    format!("self-loop at node {i}"),
                ));
            }
        }
        let symmetric = exactly_symmetric(&weights);
        Ok(Self { weights, symmetric })
    }

    pub fn empty(n: usize) -> Self {
        Self {
            weights: SparseMatrix::empty(n, n),
            symmetric: true,
        }
    }

    /// Undirected graph from an edge list; each `(i, j, w)` sets both
    /// directions.
    pub fn from_undirected_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut triplets = Vec::with_capacity(edges.len() * 2);
        for &(i, j, w) in edges {
            triplets.push((i, j, w));
            if i != j {
                triplets.push((j, i, w));
            }
        }
        Self::new(SparseMatrix::from_triplets(n, n, &dedup_last(triplets))?)
    }

    /// Keeps the positive off-diagonal part of a dense matrix.
    pub fn from_dense_clipped(m: &DenseMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::shape("from_dense_clipped", format!("{:?}", m.shape())));
        }
        let n = m.rows();
        let per_row = (0..n)
            .map(|i| {
                m.row(i)
                    .iter()
                    .enumerate()
                    .filter(|&(j, &v)| j != i && v > 0.0 && v.is_finite())
                    .map(|(j, &v)| (j, v))
                    .collect()
            })
            .collect();
        Self::new(SparseMatrix::from_rows_unchecked(n, n, per_row))
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.weights.rows()
    }

    #[inline]
    pub fn weights(&self) -> &SparseMatrix {
        &self.weights
    }

    #[inline]
    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights.get(i, j)
    }

    pub fn nnz(&self) -> usize {
        self.weights.nnz()
    }

    pub fn degrees(&self) -> Vec<f64> {
        self.weights.row_sums()
    }

    pub fn max_degree_count(&self) -> usize {
        (0..self.n()).map(|i| self.weights.row(i).0.len()).max().unwrap_or(0)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        self.weights.to_dense()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.values().iter().sum()
    }

    fn require_symmetric(&self, op: &'static str) -> Result<()> {
        if !self.symmetric {
            return Err(Error::contract(op, "adjacency is not symmetric"));
        }
        Ok(())
    }
}

fn dedup_last(mut t: Vec<(usize, usize, f64)>) -> Vec<(usize, usize, f64)> {
    t.sort_by_key(|e| (e.0, e.1));
    let mut out: Vec<(usize, usize, f64)> = Vec::with_capacity(t.len());
    for e in t {
        match out.last_mut() {
            Some(last) if last.0 == e.0 && last.1 == e.1 => *last = e,
            _ => out.push(e),
        }
    }
    out
}

fn exactly_symmetric(w: &SparseMatrix) -> bool {
    w.iter().all(|(i, j, v)| w.get(j, i) == v)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LaplacianKind {
    Combinatorial,
    SymmetricNormalized,
}

#[derive(Clone, Debug)]
pub struct LaplacianMatrix {
    pub values: DenseMatrix,
    pub kind: LaplacianKind,
}

impl LaplacianMatrix {
    pub fn n(&self) -> usize {
        self.values.rows()
    }
}

/// `L = D - A`.
pub fn laplacian(a: &AdjacencyMatrix) -> Result<LaplacianMatrix> {
    a.require_symmetric("laplacian")?;
    let n = a.n();
    let mut values = DenseMatrix::zeros(n, n);
    for (i, j, w) in a.weights().iter() {
        values.set(i, j, -w);
        values.add_at(i, i, w);
    }
    Ok(LaplacianMatrix {
        values,
        kind: LaplacianKind::Combinatorial,
    })
}

/// `I - D^{-1/2} A D^{-1/2}`; isolated nodes keep a unit diagonal.
pub fn normalized_laplacian(a: &AdjacencyMatrix) -> Result<LaplacianMatrix> {
    a.require_symmetric("normalized_laplacian")?;
    let n = a.n();
    let dinv = inv_sqrt_degrees(&a.degrees());
    let mut values = DenseMatrix::identity(n);
    for (i, j, w) in a.weights().iter() {
        values.set(i, j, -dinv[i] * w * dinv[j]);
    }
    Ok(LaplacianMatrix {
        values,
        kind: LaplacianKind::SymmetricNormalized,
    })
}

/// `D^{-1/2} A D^{-1/2}` as a sparse matrix; zero-degree nodes stay empty.
pub fn normalized_adjacency(a: &AdjacencyMatrix) -> SparseMatrix {
    let dinv = inv_sqrt_degrees(&a.degrees());
    let values = a
        .weights()
        .iter()
        .map(|(i, j, w)| dinv[i] * w * dinv[j])
        .collect();
    a.weights().with_values(values).pruned()
}

pub(crate) fn inv_sqrt_degrees(deg: &[f64]) -> Vec<f64> {
    deg.iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect()
}

/// `tr(X^T L X)` via `sum_i d_i |x_i|^2 - sum_ij A_ij x_i . x_j`.
pub fn dirichlet_energy(x: &DenseMatrix, a: &AdjacencyMatrix) -> Result<f64> {
    a.require_symmetric("dirichlet_energy")?;
    if x.rows() != a.n() {
        return Err(Error::shape(
            "dirichlet_energy",
            format!("{} feature rows for {} nodes", x.rows(), a.n()),
        ));
    }
    let deg = a.degrees();
    let mut energy = 0.0;
    for (i, d) in deg.iter().enumerate() {
        energy += d * crate::linalg::dense::dot(x.row(i), x.row(i));
    }
    for (i, j, w) in a.weights().iter() {
        energy -= w * crate::linalg::dense::dot(x.row(i), x.row(j));
    }
    Ok(energy.max(0.0))
}

/// Per row, keeps the `k` largest positive weights. Ties at the cut keep the
/// lower column index.
pub fn knn_sparsify(a: &AdjacencyMatrix, k: usize) -> Result<AdjacencyMatrix> {
    if k == 0 {
        return Err(Error::contract("knn_sparsify", "k must be at least 1"));
    }
    let n = a.n();
    let per_row = crate::par::map_range(n, |i| {
        let (cols, vals) = a.weights().row(i);
        let mut entries: Vec<(usize, f64)> = cols
            .iter()
            .zip(vals)
            .filter(|(&j, &v)| j != i && v > 0.0)
            .map(|(&j, &v)| (j, v))
            .collect();
        if entries.len() > k {
            entries.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
            entries.truncate(k);
            entries.sort_by_key(|e| e.0);
        }
        entries
    });
    AdjacencyMatrix::new(SparseMatrix::from_rows_unchecked(n, n, per_row))
}

/// `(A + A^T) / 2`.
pub fn symmetrize(a: &AdjacencyMatrix) -> AdjacencyMatrix {
    if a.is_symmetric() {
        return a.clone();
    }
    let n = a.n();
    let transpose = a.weights().transpose();
    let per_row = (0..n)
        .map(|i| {
            let mut cols: Vec<usize> = a.weights().row(i).0.to_vec();
            cols.extend_from_slice(transpose.row(i).0);
            cols.sort_unstable();
            cols.dedup();
            cols.into_iter()
                .map(|j| (j, (a.get(i, j) + a.get(j, i)) * 0.5))
                .filter(|&(_, v)| v > 0.0)
                .collect()
        })
        .collect();
    let weights = SparseMatrix::from_rows_unchecked(n, n, per_row);
    AdjacencyMatrix {
        weights,
        symmetric: true,
    }
}

/// Elementwise `max(x, 0)`.
pub fn clip_negative(m: &DenseMatrix) -> DenseMatrix {
    m.map(|x| x.max(0.0))
}

/// Findings from [`validate_adjacency`]; empty when the matrix is valid.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub negative_entries: Vec<(usize, usize, f64)>,
    pub nonfinite_entries: Vec<(usize, usize)>,
    pub nonzero_diagonal: Vec<usize>,
    /// `max |A - A^T|`, reported only when symmetry is required and violated.
    pub asymmetry: Option<f64>,
    pub not_square: bool,
}

impl Diagnostics {
    pub fn is_empty(&self) -> bool {
        self.negative_entries.is_empty()
            && self.nonfinite_entries.is_empty()
            && self.nonzero_diagonal.is_empty()
            && self.asymmetry.is_none()
            && !self.not_square
    }

    pub fn summary(&self) -> String {
        if self.is_empty() {
            return "ok".into();
        }
        let mut parts = Vec::new();
        if self.not_square {
            parts.push("matrix is not square".to_string());
        }
        if !self.negative_entries.is_empty() {
            parts.push(format!("{} negative entries", self.negative_entries.len()));
        }
        if !self.nonfinite_entries.is_empty() {
            parts.push(format!("{} non-finite entries", self.nonfinite_entries.len()));
        }
        if !self.nonzero_diagonal.is_empty() {
            parts.push(format!(
                "nonzero diagonal at {:?}",
                &self.nonzero_diagonal[..self.nonzero_diagonal.len().min(10)]
            ));
        }
        if let Some(a) = self.asymmetry {
            parts.push(format!("asymmetric, max |A - A^T| = {a:e}"));
        }
        parts.join("; ")
    }
}

/// Reports negative or non-finite weights, self-loops and (optionally)
/// asymmetry of a raw weight matrix.
pub fn validate_adjacency(weights: &SparseMatrix, require_symmetric: bool) -> Diagnostics {
    let mut d = Diagnostics {
        not_square: weights.rows() != weights.cols(),
        ..Default::default()
    };
    for (i, j, v) in weights.iter() {
        if !v.is_finite() {
            d.nonfinite_entries.push((i, j));
        } else if v < 0.0 {
            d.negative_entries.push((i, j, v));
        }
        if i == j {
            d.nonzero_diagonal.push(i);
        }
    }
    if require_symmetric && !d.not_square {
        let mut worst = 0.0f64;
        for (i, j, v) in weights.iter() {
            worst = worst.max((v - weights.get(j, i)).abs());
        }
        if worst > 0.0 {
            d.asymmetry = Some(worst);
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::eig_sym;

    fn p2() -> AdjacencyMatrix {
        AdjacencyMatrix::from_undirected_edges(2, &[(0, 1, 1.0)]).unwrap()
    }

    fn p3() -> AdjacencyMatrix {
        AdjacencyMatrix::from_undirected_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap()
    }

    fn directed(n: usize, t: &[(usize, usize, f64)]) -> AdjacencyMatrix {
        AdjacencyMatrix::new(SparseMatrix::from_triplets(n, n, t).unwrap()).unwrap()
    }

    #[test]
    fn laplacian_examples() {
        assert_eq!(
            laplacian(&p2()).unwrap().values,
            DenseMatrix::from_rows(&[[1.0, -1.0], [-1.0, 1.0]])
        );
        assert_eq!(
            laplacian(&p3()).unwrap().values,
            DenseMatrix::from_rows(&[[1.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]])
        );
        assert_eq!(laplacian(&AdjacencyMatrix::empty(3)).unwrap().values, DenseMatrix::zeros(3, 3));
    }

    #[test]
    fn laplacian_rejects_asymmetric() {
        let a = directed(2, &[(0, 1, 1.0)]);
        assert!(matches!(laplacian(&a), Err(Error::Contract { .. })));
    }

    #[test]
    fn normalized_laplacian_examples() {
        assert_eq!(
            normalized_laplacian(&p2()).unwrap().values,
            DenseMatrix::from_rows(&[[1.0, -1.0], [-1.0, 1.0]])
        );
        let l = normalized_laplacian(&p3()).unwrap().values;
        let r = -1.0 / 2f64.sqrt();
        assert_eq!(l.diagonal(), vec![1.0, 1.0, 1.0]);
        assert!((l.get(0, 1) - r).abs() < 1e-15 && (l.get(1, 2) - r).abs() < 1e-15);

        let iso = AdjacencyMatrix::from_undirected_edges(3, &[(0, 1, 2.0)]).unwrap();
        let l = normalized_laplacian(&iso).unwrap().values;
        assert_eq!(l.row(2), &[0.0, 0.0, 1.0]);
        assert_eq!(l.column(2), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn normalized_spectrum_in_range() {
        let l = normalized_laplacian(&p3()).unwrap();
        let e = eig_sym(&l.values).unwrap();
        assert!(e.values.iter().all(|&v| (-1e-10..=2.0 + 1e-10).contains(&v)));
    }

    #[test]
    fn dirichlet_examples() {
        let x = DenseMatrix::column_vector(&[0.0, 1.0, 2.0]);
        assert!((dirichlet_energy(&x, &p3()).unwrap() - 2.0).abs() < 1e-14);
        let c = DenseMatrix::filled(3, 2, 0.7);
        assert!(dirichlet_energy(&c, &p3()).unwrap().abs() < 1e-14);
        assert!(dirichlet_energy(&DenseMatrix::zeros(2, 1), &p3()).is_err());
    }

    #[test]
    fn knn_examples() {
        let a = directed(4, &[(3, 0, 0.5), (3, 1, 0.2), (3, 2, 0.9)]);
        let k1 = knn_sparsify(&a, 1).unwrap();
        assert_eq!(k1.weights().triplets(), vec![(3, 2, 0.9)]);
        let k2 = knn_sparsify(&a, 2).unwrap();
        assert_eq!(k2.weights().triplets(), vec![(3, 0, 0.5), (3, 2, 0.9)]);
        assert_eq!(knn_sparsify(&a, 3).unwrap(), a);
        assert!(knn_sparsify(&a, 0).is_err());
    }

    #[test]
    fn knn_tie_keeps_lower_column() {
        let a = directed(4, &[(0, 1, 0.5), (0, 2, 0.5), (0, 3, 0.5)]);
        let k = knn_sparsify(&a, 2).unwrap();
        assert_eq!(k.weights().triplets(), vec![(0, 1, 0.5), (0, 2, 0.5)]);
    }

    #[test]
    fn symmetrize_examples() {
        let a = directed(2, &[(0, 1, 1.0)]);
        let s = symmetrize(&a);
        assert!(s.is_symmetric());
        assert_eq!(s.to_dense(), DenseMatrix::from_rows(&[[0.0, 0.5], [0.5, 0.0]]));
        assert_eq!(symmetrize(&p3()), p3());
        assert_eq!(symmetrize(&s), s);
    }

    #[test]
    fn clip_examples() {
        let m = DenseMatrix::from_rows(&[[-0.3, 0.7]]);
        assert_eq!(clip_negative(&m).data(), &[0.0, 0.7]);
        let neg = DenseMatrix::filled(2, 2, -1.0);
        assert_eq!(clip_negative(&neg), DenseMatrix::zeros(2, 2));
        let dense = DenseMatrix::from_rows(&[[5.0, 0.2], [0.2, 5.0]]);
        let a = AdjacencyMatrix::from_dense_clipped(&dense).unwrap();
        assert_eq!(a.weights().triplets(), vec![(0, 1, 0.2), (1, 0, 0.2)]);
    }

    #[test]
    fn validation_findings() {
        assert!(validate_adjacency(p3().weights(), true).is_empty());
        let diag = SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        assert_eq!(validate_adjacency(&diag, true).nonzero_diagonal, vec![0]);
        let asym = SparseMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (1, 0, 0.25)]).unwrap();
        assert_eq!(validate_adjacency(&asym, true).asymmetry, Some(0.75));
        assert!(validate_adjacency(&asym, false).is_empty());
        let neg = SparseMatrix::from_triplets(2, 2, &[(0, 1, -1.0)]).unwrap();
        assert_eq!(validate_adjacency(&neg, false).negative_entries, vec![(0, 1, -1.0)]);
    }

    #[test]
    fn constructor_rejects_invalid() {
        assert!(AdjacencyMatrix::new(SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0)]).unwrap()).is_err());
        assert!(AdjacencyMatrix::new(SparseMatrix::from_triplets(2, 2, &[(0, 1, -1.0)]).unwrap()).is_err());
    }
}
