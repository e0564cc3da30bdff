//! Graph revision: `S = A + topk(Z Z^T)` with `Z` the row-normalized output
//! of a revision GCN on the observed graph, so `Z Z^T` holds cosine
//! similarities. Each node keeps its `k` largest positive similarities; the
//! selection is made symmetric before the addition.

use std::sync::Arc;

use super::{Context, Learner, RawGraph, Recorded};
use crate::error::Result;
use crate::gcn::{propagation_matrix, record_logits, Propagation};
use crate::graph::AdjacencyMatrix;
use crate::linalg::dense::dot;
use crate::linalg::tape::{Tape, Var};
use crate::linalg::{DenseMatrix, SparseMatrix};
use crate::rng::{self, StageRng};

/// Weights of the revision GCN (`d x h` and `h x e`) and the number of
/// similarities each node keeps.
#[derive(Clone, Debug, PartialEq)]
pub struct GrcnParams {
    pub w0: DenseMatrix,
    pub w1: DenseMatrix,
    pub k: usize,
}

impl GrcnParams {
    pub fn init(d: usize, h: usize, e: usize, k: usize, rng: &mut StageRng) -> Self {
        Self {
            w0: rng::glorot(d, h, rng),
            w1: rng::glorot(h, e, rng),
            k,
        }
    }
}

/// Pattern of `a0` united with the symmetric top-`k` selection of `Z Z^T`,
/// plus edge columns holding `A` and the selection indicator.
struct Revision {
    pattern: Arc<SparseMatrix>,
    observed: DenseMatrix,
    selected: DenseMatrix,
}

fn revision(a0: &AdjacencyMatrix, z: &DenseMatrix, k: usize) -> Revision {
    let n = a0.n();
    let picks: Vec<Vec<usize>> = crate::par::map_range(n, |i| {
        let mut cand: Vec<(usize, f64)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (j, dot(z.row(i), z.row(j))))
            .filter(|&(_, v)| v > 0.0)
            .collect();
        cand.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
        cand.truncate(k);
        cand.into_iter().map(|c| c.0).collect()
    });
    let mut rows: Vec<Vec<(usize, bool)>> = (0..n)
        .map(|i| a0.weights().row(i).0.iter().map(|&j| (j, false)).collect())
        .collect();
    for (i, js) in picks.iter().enumerate() {
        for &j in js {
            rows[i].push((j, true));
            rows[j].push((i, true));
        }
    }
    let mut per_row = Vec::with_capacity(n);
    let (mut observed, mut selected) = (Vec::new(), Vec::new());
    for (i, mut row) in rows.into_iter().enumerate() {
        row.sort_by(|x, y| x.0.cmp(&y.0).then(y.1.cmp(&x.1)));
        let mut merged: Vec<(usize, bool)> = Vec::with_capacity(row.len());
        for (j, s) in row {
            match merged.last_mut() {
                Some(last) if last.0 == j => last.1 |= s,
                _ => merged.push((j, s)),
            }
        }
        for &(j, s) in &merged {
            observed.push(a0.get(i, j));
            selected.push(if s { 1.0 } else { 0.0 });
        }
        per_row.push(merged.into_iter().map(|(j, _)| (j, 1.0)).collect());
    }
    Revision {
        pattern: Arc::new(SparseMatrix::from_rows_unchecked(n, n, per_row)),
        observed: DenseMatrix::column_vector(&observed),
        selected: DenseMatrix::column_vector(&selected),
    }
}

/// Edge column `A + relu(Z Z^T) * selection` over the revision pattern.
fn record_revision(tape: &mut Tape, z: Var, rev: &Revision) -> Result<Var> {
    let gram = tape.gather_gram(z, rev.pattern.clone())?;
    let mask = tape.constant(rev.selected.clone());
    let picked = tape.mul(gram, mask)?;
    let picked = tape.relu(picked);
    let observed = tape.constant(rev.observed.clone());
    tape.add(observed, picked)
}

/// `A + topk(Z Z^T)` for a given embedding `Z`; the diagonal is never set.
pub fn grcn_revise(a0: &AdjacencyMatrix, z: &DenseMatrix, k: usize) -> Result<SparseMatrix> {
    let rev = revision(a0, z, k);
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let w = record_revision(&mut tape, zv, &rev)?;
    Ok(rev.pattern.with_values(tape.value(w).data().to_vec()).pruned())
}

fn embed(tape: &mut Tape, x: &SparseMatrix, a0: &AdjacencyMatrix, w0: Var, w1: Var) -> Result<Var> {
    let prop = Propagation::Fixed(Arc::new(propagation_matrix(a0)));
    let z = record_logits(tape, &prop, x, w0, w1, None)?;
    Ok(tape.row_normalize(z))
}

pub fn grcn_adjacency(x: &SparseMatrix, a0: &AdjacencyMatrix, p: &GrcnParams) -> Result<SparseMatrix> {
    let mut tape = Tape::new();
    let w0 = tape.constant(p.w0.clone());
    let w1 = tape.constant(p.w1.clone());
    let z = embed(&mut tape, x, a0, w0, w1)?;
    grcn_revise(a0, tape.value(z), p.k)
}

impl Learner for GrcnParams {
    fn params(&self) -> Vec<&DenseMatrix> {
        vec![&self.w0, &self.w1]
    }

    fn params_mut(&mut self) -> Vec<&mut DenseMatrix> {
        vec![&mut self.w0, &mut self.w1]
    }

    fn record(&self, tape: &mut Tape, vars: &[Var], ctx: &Context) -> Result<Recorded> {
        let z = embed(tape, &ctx.x, &ctx.a0, vars[0], vars[1])?;
        let rev = revision(&ctx.a0, tape.value(z), self.k);
        let w = record_revision(tape, z, &rev)?;
        let weights = tape.edge_sym_normalize(w, rev.pattern.clone())?;
        Ok(Recorded {
            prop: Propagation::Edge {
                weights,
                pattern: rev.pattern,
                identity: true,
            },
            graph_loss: None,
            pairs: 0,
        })
    }

    fn learned(&self, ctx: &Context) -> Result<RawGraph> {
        Ok(RawGraph::Sparse(grcn_adjacency(&ctx.x, &ctx.a0, self)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p3() -> AdjacencyMatrix {
        AdjacencyMatrix::from_undirected_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap()
    }

    #[test]
    fn zero_embedding_keeps_the_observed_graph() {
        let s = grcn_revise(&p3(), &DenseMatrix::zeros(3, 2), 2).unwrap();
        assert_eq!(&s, p3().weights());
    }

    #[test]
    fn orthonormal_embedding_only_touches_the_diagonal() {
        let s = grcn_revise(&p3(), &DenseMatrix::identity(3), 2).unwrap();
        assert_eq!(&s, p3().weights());
    }

    #[test]
    fn outer_product_by_hand() {
        let z = DenseMatrix::from_rows(&[[1.0], [1.0]]);
        let s = grcn_revise(&AdjacencyMatrix::empty(2), &z, 1).unwrap();
        assert_eq!(s.to_dense(), DenseMatrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]));
    }

    #[test]
    fn selection_is_symmetric_and_capped() {
        let z = DenseMatrix::from_rows(&[[1.0, 0.0], [0.9, 0.1], [0.8, 0.3], [0.0, 1.0]]);
        let s = grcn_revise(&AdjacencyMatrix::empty(4), &z, 1).unwrap();
        let d = s.to_dense();
        assert!(d.is_symmetric(0.0));
        assert!(d.diagonal().iter().all(|&v| v == 0.0));
        // 0 -> 1, 1 -> 0, 2 -> 0, 3 -> 2, closed under symmetry.
        let expected: Vec<(usize, usize)> = vec![(0, 1), (0, 2), (1, 0), (2, 0), (2, 3), (3, 2)];
        let got: Vec<(usize, usize)> = s.iter().map(|(i, j, _)| (i, j)).collect();
        assert_eq!(got, expected);
    }
}
