//! Dense kernel graph on a learned low-rank projection:
//! `S_ij = A_ij + exp(-||R^T (x_i - x_j)||^2)` for `i != j`, regularized by
//! `1/2 sum_ij S_ij ||x_i - x_j||^2`.

use std::sync::Arc;

use super::{dense_sq_dists, Context, Learner, RawGraph, Recorded};
use crate::error::Result;
use crate::gcn::Propagation;
use crate::graph::AdjacencyMatrix;
use crate::linalg::tape::{Tape, Var};
use crate::linalg::{DenseMatrix, SparseMatrix};
use crate::rng::{self, StageRng};

/// `R` is `d x s` with `s` much smaller than `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct RglnParams {
    pub r: DenseMatrix,
}

impl RglnParams {
    pub fn init(d: usize, s: usize, rng: &mut StageRng) -> Self {
        Self {
            r: rng::glorot(d, s, rng),
        }
    }
}

fn off_diagonal_ones(n: usize) -> DenseMatrix {
    DenseMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 })
}

fn record(tape: &mut Tape, x: &Arc<SparseMatrix>, a0: &AdjacencyMatrix, r: Var) -> Result<Var> {
    let n = a0.n();
    let y = tape.sparse_matmul(x.clone(), r)?;
    let d = tape.pairwise_sq_dist(y);
    let neg = tape.scale(d, -1.0);
    let kernel = tape.exp(neg);
    let mask = tape.constant(off_diagonal_ones(n));
    let kernel = tape.mul(kernel, mask)?;
    let a = tape.constant(a0.to_dense());
    tape.add(a, kernel)
}

/// Dense learned graph with a zero diagonal.
pub fn rgln_adjacency(x: &SparseMatrix, a0: &AdjacencyMatrix, p: &RglnParams) -> Result<DenseMatrix> {
    let mut tape = Tape::new();
    let r = tape.constant(p.r.clone());
    let s = record(&mut tape, &Arc::new(x.clone()), a0, r)?;
    Ok(tape.value(s).clone())
}

/// `1/2 sum_ij S_ij ||x_i - x_j||^2`.
pub fn rgln_loss(x: &SparseMatrix, s: &DenseMatrix) -> f64 {
    let n = s.rows();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let w = s.get(i, j);
            if w != 0.0 {
                total += w * x.row_sq_dist(i, j);
            }
        }
    }
    0.5 * total
}

impl Learner for RglnParams {
    fn params(&self) -> Vec<&DenseMatrix> {
        vec![&self.r]
    }

    fn params_mut(&mut self) -> Vec<&mut DenseMatrix> {
        vec![&mut self.r]
    }

    fn record(&self, tape: &mut Tape, vars: &[Var], ctx: &Context) -> Result<Recorded> {
        let n = ctx.a0.n();
        let s = record(tape, &ctx.x, &ctx.a0, vars[0])?;
        let dists = tape.constant(dense_sq_dists(&ctx.x));
        let weighted = tape.mul(s, dists)?;
        let total = tape.sum(weighted);
        let loss = tape.scale(total, 0.5);
        let normalized = tape.sym_normalize(s)?;
        Ok(Recorded {
            prop: Propagation::Dense(normalized),
            graph_loss: Some(loss),
            pairs: n * n.saturating_sub(1),
        })
    }

    fn learned(&self, ctx: &Context) -> Result<RawGraph> {
        Ok(RawGraph::Dense(rgln_adjacency(&ctx.x, &ctx.a0, self)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p3() -> AdjacencyMatrix {
        AdjacencyMatrix::from_undirected_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap()
    }

    fn line_features() -> SparseMatrix {
        SparseMatrix::from_triplets(3, 1, &[(1, 0, 1.0), (2, 0, 2.0)]).unwrap()
    }

    #[test]
    fn zero_projection_adds_all_ones() {
        let p = RglnParams {
            r: DenseMatrix::zeros(1, 1),
        };
        let s = rgln_adjacency(&line_features(), &p3(), &p).unwrap();
        let expected = p3().to_dense().add(&off_diagonal_ones(3)).unwrap();
        assert_eq!(s, expected);
    }

    #[test]
    fn identical_rows_get_unit_kernel() {
        let x = SparseMatrix::from_triplets(3, 1, &[(0, 0, 1.0), (1, 0, 1.0), (2, 0, 5.0)]).unwrap();
        let p = RglnParams {
            r: DenseMatrix::filled(1, 1, 3.0),
        };
        let s = rgln_adjacency(&x, &p3(), &p).unwrap();
        assert_eq!(s.get(0, 1), 2.0);
        assert_eq!(s.get(1, 0), 2.0);
    }

    #[test]
    fn large_projection_recovers_the_observed_graph() {
        let p = RglnParams {
            r: DenseMatrix::filled(1, 1, 7.0),
        };
        let s = rgln_adjacency(&line_features(), &p3(), &p).unwrap();
        // ||R^T (x_i - x_j)||^2 >= 49 for every distinct pair.
        assert!(s.max_abs_diff(&p3().to_dense()) <= (-49.0f64).exp());
    }

    #[test]
    fn loss_examples() {
        let constant = SparseMatrix::from_triplets(3, 1, &[(0, 0, 2.0), (1, 0, 2.0), (2, 0, 2.0)]).unwrap();
        assert_eq!(rgln_loss(&constant, &p3().to_dense()), 0.0);
        assert_eq!(rgln_loss(&line_features(), &DenseMatrix::zeros(3, 3)), 0.0);
        assert_eq!(rgln_loss(&line_features(), &p3().to_dense()), 2.0);
        let dense = dense_sq_dists(&line_features());
        assert_eq!(dense.get(0, 2), 4.0);
    }
}
