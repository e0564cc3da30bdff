//! Attention reweighting of the observed edges:
//! `alpha_ij = softmax_{j in N_i + i} leaky_relu(a_src . W x_i + a_dst . W x_j)`.

use std::sync::Arc;

use super::{unit_pattern, Context, Learner, RawGraph, Recorded};
use crate::error::Result;
use crate::gcn::Propagation;
use crate::graph::AdjacencyMatrix;
use crate::linalg::tape::{Tape, Var};
use crate::linalg::{DenseMatrix, SparseMatrix};
use crate::rng::{self, StageRng};

/// `W` is `d x h`; `a_src` and `a_dst` are the two `h x 1` halves of the
/// attention vector.
#[derive(Clone, Debug, PartialEq)]
pub struct GatParams {
    pub w: DenseMatrix,
    pub a_src: DenseMatrix,
    pub a_dst: DenseMatrix,
    pub slope: f64,
}

impl GatParams {
    pub fn init(d: usize, h: usize, slope: f64, rng: &mut StageRng) -> Self {
        let w = rng::glorot(d, h, rng);
        let a = rng::glorot(2 * h, 1, rng);
        Self {
            w,
            a_src: DenseMatrix::column_vector(&a.data()[..h]),
            a_dst: DenseMatrix::column_vector(&a.data()[h..]),
            slope,
        }
    }

    /// The concatenated `2h x 1` attention vector.
    pub fn a(&self) -> DenseMatrix {
        let mut v = self.a_src.data().to_vec();
        v.extend_from_slice(self.a_dst.data());
        DenseMatrix::column_vector(&v)
    }
}

fn record(
    tape: &mut Tape,
    x: &Arc<SparseMatrix>,
    pattern: &Arc<SparseMatrix>,
    w: Var,
    a_src: Var,
    a_dst: Var,
    slope: f64,
) -> Result<Var> {
    let h = tape.sparse_matmul(x.clone(), w)?;
    let s = tape.matmul(h, a_src)?;
    let t = tape.matmul(h, a_dst)?;
    let e = tape.gather_pairs(s, t, pattern.clone(), 1.0)?;
    let e = tape.leaky_relu(e, slope);
    tape.edge_softmax(e, pattern.clone())
}

/// Attention weights on `a0`'s edges and self-loops; each row sums to one.
pub fn gat_adjacency(x: &SparseMatrix, a0: &AdjacencyMatrix, p: &GatParams) -> Result<SparseMatrix> {
    let pattern = Arc::new(unit_pattern(a0, true));
    let mut tape = Tape::new();
    let w = tape.constant(p.w.clone());
    let a_src = tape.constant(p.a_src.clone());
    let a_dst = tape.constant(p.a_dst.clone());
    let att = record(&mut tape, &Arc::new(x.clone()), &pattern, w, a_src, a_dst, p.slope)?;
    Ok(pattern.with_values(tape.value(att).data().to_vec()))
}

impl Learner for GatParams {
    fn params(&self) -> Vec<&DenseMatrix> {
        vec![&self.w, &self.a_src, &self.a_dst]
    }

    fn params_mut(&mut self) -> Vec<&mut DenseMatrix> {
        vec![&mut self.w, &mut self.a_src, &mut self.a_dst]
    }

    fn record(&self, tape: &mut Tape, vars: &[Var], ctx: &Context) -> Result<Recorded> {
        let pattern = Arc::new(unit_pattern(&ctx.a0, true));
        let att = record(tape, &ctx.x, &pattern, vars[0], vars[1], vars[2], self.slope)?;
        Ok(Recorded {
            prop: Propagation::Edge {
                weights: att,
                pattern,
                identity: false,
            },
            graph_loss: None,
            pairs: 0,
        })
    }

    fn learned(&self, ctx: &Context) -> Result<RawGraph> {
        Ok(RawGraph::Sparse(gat_adjacency(&ctx.x, &ctx.a0, self)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_attention(d: usize, h: usize) -> GatParams {
        GatParams {
            w: DenseMatrix::filled(d, h, 0.3),
            a_src: DenseMatrix::zeros(h, 1),
            a_dst: DenseMatrix::zeros(h, 1),
            slope: 0.2,
        }
    }

    #[test]
    fn zero_attention_is_uniform_over_neighbourhoods() {
        let a = AdjacencyMatrix::from_undirected_edges(4, &[(0, 1, 1.0), (1, 2, 1.0), (1, 3, 1.0)]).unwrap();
        let x = SparseMatrix::identity(4);
        let att = gat_adjacency(&x, &a, &zero_attention(4, 2)).unwrap();
        for i in 0..4 {
            let (cols, vals) = att.row(i);
            assert!(cols.contains(&i));
            for v in vals {
                assert!((v - 1.0 / cols.len() as f64).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn single_node_and_p2() {
        let one = gat_adjacency(&SparseMatrix::identity(1), &AdjacencyMatrix::empty(1), &zero_attention(1, 2)).unwrap();
        assert_eq!(one.to_dense(), DenseMatrix::filled(1, 1, 1.0));
        let p2 = AdjacencyMatrix::from_undirected_edges(2, &[(0, 1, 1.0)]).unwrap();
        let att = gat_adjacency(&SparseMatrix::identity(2), &p2, &zero_attention(2, 3)).unwrap();
        assert_eq!(att.to_dense(), DenseMatrix::filled(2, 2, 0.5));
    }

    #[test]
    fn concatenated_vector_matches_halves() {
        let mut rng = rng::seeded(1);
        let p = GatParams::init(3, 2, 0.2, &mut rng);
        let a = p.a();
        assert_eq!(a.rows(), 4);
        assert_eq!(&a.data()[..2], p.a_src.data());
    }
}
