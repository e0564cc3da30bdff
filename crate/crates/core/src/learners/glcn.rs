//! Learned reweighting of observed edges:
//! `S_ij = A_ij exp(relu(a . (W x_i - W x_j))) / sum_k A_ik exp(relu(a . (W x_i - W x_k)))`,
//! regularized by `sum_ij S_ij ||x_i - x_j||^2 + alpha ||S||_F^2`.

use std::sync::Arc;

use super::{pattern_sq_dists, Context, Learner, RawGraph, Recorded};
use crate::error::{Error, Result};
use crate::gcn::Propagation;
use crate::graph::AdjacencyMatrix;
use crate::linalg::tape::{Tape, Var};
use crate::linalg::{DenseMatrix, SparseMatrix};
use crate::rng::{self, StageRng};

#[derive(Clone, Debug, PartialEq)]
pub struct GlcnParams {
    pub w: DenseMatrix,
    pub a: DenseMatrix,
    /// Weight of the `||S||_F^2` term.
    pub alpha: f64,
}

impl GlcnParams {
    pub fn init(d: usize, h: usize, alpha: f64, rng: &mut StageRng) -> Self {
        Self {
            w: rng::glorot(d, h, rng),
            a: rng::glorot(h, 1, rng),
            alpha,
        }
    }
}

fn record(tape: &mut Tape, x: &Arc<SparseMatrix>, prior: &Arc<SparseMatrix>, w: Var, a: Var) -> Result<Var> {
    let h = tape.sparse_matmul(x.clone(), w)?;
    let s = tape.matmul(h, a)?;
    let e = tape.gather_pairs(s, s, prior.clone(), -1.0)?;
    let e = tape.relu(e);
    tape.edge_softmax(e, prior.clone())
}

/// Row-normalized learned weights on the support of `a0`.
pub fn glcn_adjacency(x: &SparseMatrix, a0: &AdjacencyMatrix, p: &GlcnParams) -> Result<SparseMatrix> {
    if !a0.is_symmetric() {
        return Err(Error::contract("glcn_adjacency", "observed graph must be symmetric"));
    }
    let prior = Arc::new(a0.weights().clone());
    let mut tape = Tape::new();
    let w = tape.constant(p.w.clone());
    let a = tape.constant(p.a.clone());
    let s = record(&mut tape, &Arc::new(x.clone()), &prior, w, a)?;
    Ok(prior.with_values(tape.value(s).data().to_vec()))
}

/// `sum_ij S_ij ||x_i - x_j||^2 + alpha ||S||_F^2`.
pub fn glcn_loss(x: &SparseMatrix, s: &SparseMatrix, alpha: f64) -> f64 {
    let smooth: f64 = s.iter().map(|(i, j, v)| v * x.row_sq_dist(i, j)).sum();
    let frob: f64 = s.values().iter().map(|v| v * v).sum();
    smooth + alpha * frob
}

fn record_loss(tape: &mut Tape, s: Var, dists: Var, alpha: f64) -> Result<Var> {
    let weighted = tape.mul(s, dists)?;
    let smooth = tape.sum(weighted);
    let sq = tape.sum_squares(s);
    let reg = tape.scale(sq, alpha);
    tape.add(smooth, reg)
}

impl Learner for GlcnParams {
    fn params(&self) -> Vec<&DenseMatrix> {
        vec![&self.w, &self.a]
    }

    fn params_mut(&mut self) -> Vec<&mut DenseMatrix> {
        vec![&mut self.w, &mut self.a]
    }

    fn record(&self, tape: &mut Tape, vars: &[Var], ctx: &Context) -> Result<Recorded> {
        let prior = Arc::new(ctx.a0.weights().clone());
        let s = record(tape, &ctx.x, &prior, vars[0], vars[1])?;
        let dists = tape.constant(pattern_sq_dists(&ctx.x, &prior));
        let loss = record_loss(tape, s, dists, self.alpha)?;
        Ok(Recorded {
            prop: Propagation::Edge {
                weights: s,
                pattern: prior.clone(),
                identity: true,
            },
            graph_loss: Some(loss),
            pairs: prior.nnz(),
        })
    }

    fn learned(&self, ctx: &Context) -> Result<RawGraph> {
        Ok(RawGraph::Sparse(glcn_adjacency(&ctx.x, &ctx.a0, self)?))
    }
}
