//! Multi-view graph structure learning.
//!
//! Several single-view learners each produce a weighted graph over the same
//! nodes. The graphs are merged through their spectral subspaces on the
//! Grassmann manifold, sparsified, and handed to a two-layer GCN for
//! transductive node classification.
//!
//! Module map:
//! - [`linalg`]: matrices, differentiation tape, eigensolver, SVD
//! - [`graph`]: adjacency matrices, Laplacians, sparsification
//! - [`io`]: dataset and `.adj` file formats
//! - [`learners`]: GAT, GLCN, RGLN, GRCN and ProGCN structure learners
//! - [`merge`]: subspace merging and the averaging baseline
//! - [`gcn`]: the classifier, training loop and ensembles
//! - [`pipeline`]: configuration, orchestration, sweeps, reports
//! - [`synth`]: planted-partition citation-like datasets

pub mod error;
pub mod gcn;
pub mod graph;
pub mod io;
pub mod learners;
pub mod linalg;
pub mod merge;
mod par;
pub mod pipeline;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
pub use linalg::{DenseMatrix, SparseMatrix};
