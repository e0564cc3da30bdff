//! Free-parameter graph: the learned matrix `S` itself is optimized under
//! `sum_ij S_ij ||x_i - x_j||^2 + alpha ||S||_1 + beta ||S||_* + gamma ||A - S||_F^2`.
//! After every step `S` is projected back to symmetric, nonnegative, with a
//! zero diagonal.

use super::{dense_sq_dists, Context, Learner, RawGraph, Recorded, TrainConfig};
use crate::error::{Error, Result};
use crate::gcn::Propagation;
use crate::graph::AdjacencyMatrix;
use crate::linalg::tape::{Tape, Var};
use crate::linalg::{DenseMatrix, SparseMatrix};

#[derive(Clone, Debug, PartialEq)]
pub struct ProgcnParams {
    pub s: DenseMatrix,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl ProgcnParams {
    pub fn init(a0: &AdjacencyMatrix, cfg: &TrainConfig) -> Self {
        Self {
            s: a0.to_dense(),
            alpha: cfg.progcn_alpha,
            beta: cfg.progcn_beta,
            gamma: cfg.progcn_gamma,
        }
    }
}

fn record_loss(
    tape: &mut Tape,
    s: Var,
    dists: &DenseMatrix,
    a0: &DenseMatrix,
    p: &ProgcnParams,
) -> Result<Var> {
    let d = tape.constant(dists.clone());
    let weighted = tape.mul(s, d)?;
    let mut loss = tape.sum(weighted);
    if p.alpha > 0.0 {
        let abs = tape.abs(s);
        let l1 = tape.sum(abs);
        let term = tape.scale(l1, p.alpha);
        loss = tape.add(loss, term)?;
    }
    if p.beta > 0.0 {
        let nuc = tape.nuclear_norm(s);
        let term = tape.scale(nuc, p.beta);
        loss = tape.add(loss, term)?;
    }
    if p.gamma > 0.0 {
        let a = tape.constant(a0.clone());
        let diff = tape.sub(a, s)?;
        let sq = tape.sum_squares(diff);
        let term = tape.scale(sq, p.gamma);
        loss = tape.add(loss, term)?;
    }
    Ok(loss)
}

/// The full objective for the graph `p.s` before any classification term.
pub fn progcn_loss(x: &SparseMatrix, a0: &AdjacencyMatrix, p: &ProgcnParams) -> Result<f64> {
    let n = a0.n();
    if p.s.shape() != (n, n) || x.rows() != n {
        return Err(Error::shape("progcn_loss", format!("S {:?}, {} nodes", p.s.shape(), n)));
    }
    let mut tape = Tape::new();
    let s = tape.constant(p.s.clone());
    let loss = record_loss(&mut tape, s, &dense_sq_dists(x), &a0.to_dense(), p)?;
    Ok(tape.scalar(loss))
}

impl Learner for ProgcnParams {
    fn params(&self) -> Vec<&DenseMatrix> {
        vec![&self.s]
    }

    fn params_mut(&mut self) -> Vec<&mut DenseMatrix> {
        vec![&mut self.s]
    }

    fn record(&self, tape: &mut Tape, vars: &[Var], ctx: &Context) -> Result<Recorded> {
        let n = ctx.a0.n();
        let s = vars[0];
        let loss = record_loss(tape, s, &dense_sq_dists(&ctx.x), &ctx.a0.to_dense(), self)?;
        let normalized = tape.sym_normalize(s)?;
        Ok(Recorded {
            prop: Propagation::Dense(normalized),
            graph_loss: Some(loss),
            pairs: n * n.saturating_sub(1),
        })
    }

    fn learned(&self, _ctx: &Context) -> Result<RawGraph> {
        Ok(RawGraph::Dense(self.s.clone()))
    }

    fn project(&mut self) {
        let n = self.s.rows();
        for i in 0..n {
            self.s.set(i, i, 0.0);
            for j in (i + 1)..n {
                let v = (0.5 * (self.s.get(i, j) + self.s.get(j, i))).max(0.0);
                self.s.set(i, j, v);
                self.s.set(j, i, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::svd_thin;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn constant_features(n: usize) -> SparseMatrix {
        SparseMatrix::from_triplets(n, 1, &(0..n).map(|i| (i, 0, 1.0)).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn observed_graph_with_constant_features_costs_nothing() {
        let a = AdjacencyMatrix::from_undirected_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        let p = ProgcnParams {
            s: a.to_dense(),
            alpha: 0.0,
            beta: 0.0,
            gamma: 3.0,
        };
        assert_eq!(progcn_loss(&constant_features(3), &a, &p).unwrap(), 0.0);
    }

    #[test]
    fn permutation_matrix_terms() {
        let p = ProgcnParams {
            s: DenseMatrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]),
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.0,
        };
        let loss = progcn_loss(&constant_features(2), &AdjacencyMatrix::empty(2), &p).unwrap();
        assert!((loss - 4.0).abs() < 1e-12);
    }

    #[test]
    fn random_terms_match_direct_computation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 4;
        let s = DenseMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let x = SparseMatrix::from_dense(&DenseMatrix::from_fn(n, 3, |_, _| rng.gen_range(-2.0..2.0)));
        let a = AdjacencyMatrix::from_undirected_edges(4, &[(0, 1, 0.5), (2, 3, 2.0), (0, 3, 1.0)]).unwrap();
        let (alpha, beta, gamma) = (0.3, 0.7, 1.1);
        let p = ProgcnParams {
            s: s.clone(),
            alpha,
            beta,
            gamma,
        };
        let xd = x.to_dense();
        let mut smooth = 0.0;
        for i in 0..n {
            for j in 0..n {
                let d: f64 = xd.row(i).iter().zip(xd.row(j)).map(|(u, v)| (u - v) * (u - v)).sum();
                smooth += s.get(i, j) * d;
            }
        }
        let l1: f64 = s.data().iter().map(|v| v.abs()).sum();
        let nuclear = svd_thin(&s).nuclear_norm();
        let fro: f64 = a.to_dense().sub(&s).unwrap().data().iter().map(|v| v * v).sum();
        let expected = smooth + alpha * l1 + beta * nuclear + gamma * fro;
        assert!((progcn_loss(&x, &a, &p).unwrap() - expected).abs() < 1e-10);
    }

    #[test]
    fn projection_restores_the_invariants() {
        let mut p = ProgcnParams {
            s: DenseMatrix::from_rows(&[[1.0, -0.5, 2.0], [0.5, 3.0, 1.0], [0.0, 0.2, 4.0]]),
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
        };
        p.project();
        let expected = DenseMatrix::from_rows(&[[0.0, 0.0, 1.0], [0.0, 0.0, 0.6], [1.0, 0.6, 0.0]]);
        assert!(p.s.max_abs_diff(&expected) < 1e-15);
    }
}
