//! Subspace merging of several graph views.
//!
//! Each view contributes its Laplacian `L_i` and the span `U_i` of its `p`
//! smallest eigenvectors. The merged Laplacian
//! `L_new = sum L_i - alpha sum U_i U_i^T` minimizes the summed connectivity
//! cost plus the projection distance to every view's subspace. The merged
//! adjacency is its negated off-diagonal part, clipped at zero, reduced to the
//! `k` strongest edges per node and symmetrized.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{self, AdjacencyMatrix, LaplacianMatrix};
use crate::linalg::{eig_sym_smallest, DenseMatrix, SparseMatrix};

/// Orthonormal `n x p` basis with the eigenvalues it was taken from.
#[derive(Clone, Debug)]
pub struct SubspaceBasis {
    pub u: DenseMatrix,
    pub eigenvalues: Vec<f64>,
}

impl SubspaceBasis {
    pub fn dim(&self) -> usize {
        self.u.cols()
    }

    /// `U U^T`.
    pub fn projector(&self) -> DenseMatrix {
        self.u.matmul_t(&self.u).expect("same basis")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeLaplacian {
    Normalized,
    Combinatorial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeConfig {
    pub alpha: f64,
    pub p: usize,
    pub k: usize,
    pub laplacian: MergeLaplacian,
}

impl MergeConfig {
    /// Defaults with `p = 10 c`.
    pub fn for_classes(c: usize) -> Self {
        Self {
            alpha: 0.4,
            p: 10 * c,
            k: 30,
            laplacian: MergeLaplacian::Normalized,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("merge.alpha must be >= 0, got {}", self.alpha)));
        }
        if self.p == 0 || self.k == 0 {
            return Err(Error::Config("merge.p and merge.k must be at least 1".into()));
        }
        Ok(())
    }
}

/// The `p` smallest-eigenvalue eigenvectors of `l`.
pub fn subspace_of(l: &LaplacianMatrix, p: usize) -> Result<SubspaceBasis> {
    let (eigenvalues, u) = eig_sym_smallest(&l.values, p)?;
    Ok(SubspaceBasis { u, eigenvalues })
}

/// `d^2 = p - ||U1^T U2||_F^2 = p - tr(U1 U1^T U2 U2^T)`.
pub fn projection_distance_sq(u1: &SubspaceBasis, u2: &SubspaceBasis) -> Result<f64> {
    if u1.u.shape() != u2.u.shape() {
        return Err(Error::shape(
            "projection_distance_sq",
            format!("{:?} vs {:?}", u1.u.shape(), u2.u.shape()),
        ));
    }
    let m = u1.u.t_matmul(&u2.u)?;
    let overlap: f64 = m.data().iter().map(|x| x * x).sum();
    Ok(u1.dim() as f64 - overlap)
}

/// `sum L_i - alpha sum U_i U_i^T`, folded in view order.
pub fn merged_laplacian(ls: &[LaplacianMatrix], us: &[SubspaceBasis], alpha: f64) -> Result<DenseMatrix> {
    if ls.is_empty() || ls.len() != us.len() {
        return Err(Error::contract(
            "merged_laplacian",
            format!("{} Laplacians and {} subspaces", ls.len(), us.len()),
        ));
    }
    let n = ls[0].n();
    if ls.iter().any(|l| l.n() != n) || us.iter().any(|u| u.u.rows() != n) {
        return Err(Error::shape("merged_laplacian", "views disagree on node count"));
    }
    let mut sum = ls[0].values.clone();
    for l in &ls[1..] {
        sum.axpy(1.0, &l.values)?;
    }
    if alpha != 0.0 {
        let projectors = projector_sum(us)?;
        sum.axpy(-alpha, &projectors)?;
    }
    Ok(sum)
}

/// `sum U_i U_i^T`.
pub fn projector_sum(us: &[SubspaceBasis]) -> Result<DenseMatrix> {
    let mut total = us[0].projector();
    for u in &us[1..] {
        total.axpy(1.0, &u.projector())?;
    }
    Ok(total)
}

/// `diag(L_new) - L_new`: the negated off-diagonal with a zero diagonal.
pub fn pre_clip_adjacency(l_new: &DenseMatrix) -> DenseMatrix {
    let n = l_new.rows();
    DenseMatrix::from_fn(n, l_new.cols(), |i, j| if i == j { 0.0 } else { -l_new.get(i, j) })
}

/// [`pre_clip_adjacency`] followed by clipping negative entries.
pub fn merged_adjacency(l_new: &DenseMatrix) -> Result<AdjacencyMatrix> {
    if !l_new.is_symmetric(1e-10 * l_new.max_abs().max(1.0)) {
        return Err(Error::contract("merged_adjacency", "merged Laplacian is not symmetric"));
    }
    let adj = AdjacencyMatrix::from_dense_clipped(&graph::clip_negative(&pre_clip_adjacency(l_new)))?;
    Ok(graph::symmetrize(&adj))
}

/// Intermediate results of [`merge_graphs_detailed`].
#[derive(Clone, Debug)]
pub struct MergeOutput {
    pub adjacency: AdjacencyMatrix,
    pub subspaces: Vec<SubspaceBasis>,
    pub merged_laplacian: DenseMatrix,
}

pub fn merge_graphs(views: &[AdjacencyMatrix], cfg: &MergeConfig) -> Result<AdjacencyMatrix> {
    Ok(merge_graphs_detailed(views, cfg)?.adjacency)
}

/// Laplacians, subspaces, merged Laplacian, clipped adjacency, per-row
/// top-k, and symmetrization, in that order.
pub fn merge_graphs_detailed(views: &[AdjacencyMatrix], cfg: &MergeConfig) -> Result<MergeOutput> {
    cfg.validate()?;
    let n = check_views("merge_graphs", views)?;
    if cfg.p > n {
        return Err(Error::contract("merge_graphs", format!("p = {} exceeds n = {n}", cfg.p)));
    }
    for (i, v) in views.iter().enumerate() {
        let diag = graph::validate_adjacency(v.weights(), true);
        if !diag.is_empty() {
            return Err(Error::contract("merge_graphs", format!("view {i}: {}", diag.summary())));
        }
    }
    let laplacians = views
        .iter()
        .map(|v| match cfg.laplacian {
            MergeLaplacian::Normalized => graph::normalized_laplacian(v),
            MergeLaplacian::Combinatorial => graph::laplacian(v),
        })
        .collect::<Result<Vec<_>>>()?;
    let subspaces = crate::par::map_slice(&laplacians, |l| subspace_of(l, cfg.p))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let l_new = merged_laplacian(&laplacians, &subspaces, cfg.alpha)?;
    let clipped = merged_adjacency(&l_new)?;
    let adjacency = graph::symmetrize(&graph::knn_sparsify(&clipped, cfg.k)?);
    Ok(MergeOutput {
        adjacency,
        subspaces,
        merged_laplacian: l_new,
    })
}

fn check_views(op: &'static str, views: &[AdjacencyMatrix]) -> Result<usize> {
    let n = views
        .first()
        .ok_or_else(|| Error::contract(op, "no views"))?
        .n();
    if views.iter().any(|v| v.n() != n) {
        return Err(Error::shape(op, "views disagree on node count"));
    }
    Ok(n)
}

/// `(1/m) sum D_i^{-1/2} A_i D_i^{-1/2}`.
pub fn average_merge_baseline(views: &[AdjacencyMatrix]) -> Result<AdjacencyMatrix> {
    let n = check_views("average_merge_baseline", views)?;
    let mut triplets = Vec::new();
    for v in views {
        triplets.extend(graph::normalized_adjacency(&graph::symmetrize(v)).iter());
    }
    let sum = SparseMatrix::from_triplets(n, n, &triplets)?;
    AdjacencyMatrix::new(sum.scale(1.0 / views.len() as f64).pruned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::eig_sym;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k2() -> AdjacencyMatrix {
        AdjacencyMatrix::from_undirected_edges(2, &[(0, 1, 1.0)]).unwrap()
    }

    fn random_graph(n: usize, density: f64, rng: &mut ChaCha8Rng) -> AdjacencyMatrix {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.gen::<f64>() < density {
                    edges.push((i, j, rng.gen_range(0.1..2.0)));
                }
            }
        }
        AdjacencyMatrix::from_undirected_edges(n, &edges).unwrap()
    }

    fn basis(cols: &[&[f64]]) -> SubspaceBasis {
        let n = cols[0].len();
        let mut u = DenseMatrix::zeros(n, cols.len());
        for (j, c) in cols.iter().enumerate() {
            u.set_column(j, c);
        }
        SubspaceBasis {
            u,
            eigenvalues: vec![0.0; cols.len()],
        }
    }

    #[test]
    fn subspace_examples() {
        let l = graph::normalized_laplacian(&k2()).unwrap();
        let s = subspace_of(&l, 1).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((s.u.get(0, 0) - r).abs() < 1e-12 && (s.u.get(1, 0) - r).abs() < 1e-12);
        assert!(s.eigenvalues[0].abs() < 1e-12);

        let two = AdjacencyMatrix::from_undirected_edges(4, &[(0, 1, 1.0), (2, 3, 1.0)]).unwrap();
        let s = subspace_of(&graph::normalized_laplacian(&two).unwrap(), 2).unwrap();
        assert!(s.eigenvalues.iter().all(|v| v.abs() < 1e-12));
        let indicators = basis(&[&[r, r, 0.0, 0.0], &[0.0, 0.0, r, r]]);
        assert!(projection_distance_sq(&s, &indicators).unwrap().abs() < 1e-12);
        assert!(s.u.t_matmul(&s.u).unwrap().max_abs_diff(&DenseMatrix::identity(2)) < 1e-10);
        assert!(subspace_of(&l, 3).is_err());
    }

    #[test]
    fn projection_distance_examples() {
        let e1 = basis(&[&[1.0, 0.0]]);
        let e2 = basis(&[&[0.0, 1.0]]);
        assert_eq!(projection_distance_sq(&e1, &e1).unwrap(), 0.0);
        assert_eq!(projection_distance_sq(&e1, &e2).unwrap(), 1.0);
        assert!(projection_distance_sq(&e1, &basis(&[&[1.0, 0.0, 0.0]])).is_err());
    }

    #[test]
    fn merged_laplacian_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_graph(6, 0.6, &mut rng);
        let l = graph::normalized_laplacian(&a).unwrap();
        let full = subspace_of(&l, 6).unwrap();
        let m = merged_laplacian(std::slice::from_ref(&l), &[full], 0.3).unwrap();
        let expected = l.values.sub(&DenseMatrix::identity(6).scale(0.3)).unwrap();
        assert!(m.max_abs_diff(&expected) < 1e-12);

        let u = subspace_of(&l, 2).unwrap();
        let zero = merged_laplacian(&[l.clone(), l.clone()], &[u.clone(), u.clone()], 0.0).unwrap();
        assert_eq!(zero, l.values.add(&l.values).unwrap());
        let two = merged_laplacian(&[l.clone(), l.clone()], &[u.clone(), u.clone()], 0.5).unwrap();
        let oracle = l.values.scale(2.0).sub(&u.projector().scale(2.0 * 0.5)).unwrap();
        assert!(two.max_abs_diff(&oracle) < 1e-9);
        assert!(merged_laplacian(&[], &[], 0.1).is_err());
    }

    #[test]
    fn merged_adjacency_examples() {
        let l = graph::laplacian(&k2()).unwrap();
        assert_eq!(merged_adjacency(&l.values).unwrap(), k2());
        let positive = DenseMatrix::from_rows(&[[1.0, 0.5], [0.5, 1.0]]);
        assert_eq!(merged_adjacency(&positive).unwrap().nnz(), 0);
    }

    #[test]
    fn single_view_without_alpha_recovers_normalized_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_graph(8, 0.5, &mut rng);
        let cfg = MergeConfig {
            alpha: 0.0,
            p: 3,
            k: 8,
            laplacian: MergeLaplacian::Normalized,
        };
        let merged = merge_graphs(std::slice::from_ref(&a), &cfg).unwrap();
        let deg = a.degrees();
        for i in 0..8 {
            for j in 0..8 {
                let expected = if i == j || deg[i] == 0.0 || deg[j] == 0.0 {
                    0.0
                } else {
                    a.get(i, j) / (deg[i] * deg[j]).sqrt()
                };
                assert!((merged.get(i, j) - expected).abs() < 1e-14, "({i},{j})");
            }
        }
    }

    #[test]
    fn disjoint_views_merge_to_their_union() {
        let left = AdjacencyMatrix::from_undirected_edges(6, &[(0, 1, 1.0), (1, 2, 2.0)]).unwrap();
        let right = AdjacencyMatrix::from_undirected_edges(6, &[(3, 4, 1.0), (4, 5, 1.0), (3, 5, 1.0)]).unwrap();
        let cfg = MergeConfig {
            alpha: 0.0,
            p: 2,
            k: 5,
            laplacian: MergeLaplacian::Normalized,
        };
        let merged = merge_graphs(&[left.clone(), right.clone()], &cfg).unwrap();
        let oracle = graph::normalized_adjacency(&left)
            .add(&graph::normalized_adjacency(&right))
            .unwrap()
            .to_dense();
        assert!(merged.to_dense().max_abs_diff(&oracle) < 1e-15);
    }

    #[test]
    fn closed_form_minimizes_the_subspace_objective() {
        // tr(U^T L_new U) + alpha p m is the objective over orthonormal U; the
        // p smallest eigenvectors of L_new must beat random candidates.
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let (n, p, alpha) = (5, 2, 0.7);
        let views: Vec<_> = (0..3).map(|_| random_graph(n, 0.6, &mut rng)).collect();
        let ls: Vec<_> = views.iter().map(|v| graph::normalized_laplacian(v).unwrap()).collect();
        let us: Vec<_> = ls.iter().map(|l| subspace_of(l, p).unwrap()).collect();
        let objective = |u: &SubspaceBasis| -> f64 {
            let mut total = 0.0;
            for (l, ui) in ls.iter().zip(&us) {
                total += u.u.t_matmul(&l.values.matmul(&u.u).unwrap()).unwrap().trace();
                total += alpha * projection_distance_sq(u, ui).unwrap();
            }
            total
        };
        let l_new = merged_laplacian(&ls, &us, alpha).unwrap();
        let best = subspace_of(
            &LaplacianMatrix {
                values: l_new.clone(),
                kind: graph::LaplacianKind::SymmetricNormalized,
            },
            p,
        )
        .unwrap();
        let best_value = objective(&best);
        let eig = eig_sym(&l_new).unwrap();
        let closed: f64 = eig.values[..p].iter().sum::<f64>() + alpha * (p * ls.len()) as f64;
        assert!((best_value - closed).abs() < 1e-10);
        for _ in 0..200 {
            let g = DenseMatrix::from_fn(n, p, |_, _| rng.gen_range(-1.0..1.0));
            let q = crate::linalg::svd_thin(&g).u;
            let candidate = SubspaceBasis {
                u: q,
                eigenvalues: vec![],
            };
            assert!(objective(&candidate) >= best_value - 1e-10);
        }
    }

    #[test]
    fn average_baseline_examples() {
        let a = AdjacencyMatrix::from_undirected_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        let b = AdjacencyMatrix::from_undirected_edges(3, &[(0, 2, 4.0)]).unwrap();
        let single = average_merge_baseline(std::slice::from_ref(&a)).unwrap();
        assert_eq!(single.weights(), &graph::normalized_adjacency(&a));
        assert_eq!(average_merge_baseline(&[a.clone(), a.clone()]).unwrap(), single);
        let mean = average_merge_baseline(&[a, b]).unwrap().to_dense();
        let r = 0.5 * std::f64::consts::FRAC_1_SQRT_2;
        let expected = DenseMatrix::from_rows(&[[0.0, r, 0.5], [r, 0.0, r], [0.5, r, 0.0]]);
        assert!(mean.max_abs_diff(&expected) < 1e-15);
        assert!(average_merge_baseline(&[]).is_err());
    }
}
