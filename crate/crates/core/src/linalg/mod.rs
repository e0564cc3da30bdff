//! Numerical substrate: dense/sparse matrices, the differentiation tape, and
//! the symmetric eigensolver and thin SVD.

pub mod dense;
pub mod eigen;
pub mod sparse;
pub mod svd;
pub mod tape;

pub use dense::{leaky_relu, row_softmax, DenseMatrix};
pub use eigen::{eig_sym, eig_sym_smallest, SymmetricEigen};
pub use sparse::SparseMatrix;
pub use svd::{svd_thin, ThinSvd};
pub use tape::{gradients, Gradients, Tape, Var};

/// `a * b` for either a dense or a sparse left operand.
pub enum MatrixRef<'a> {
    Dense(&'a DenseMatrix),
    Sparse(&'a SparseMatrix),
}

impl<'a> From<&'a DenseMatrix> for MatrixRef<'a> {
    fn from(m: &'a DenseMatrix) -> Self {
        MatrixRef::Dense(m)
    }
}

impl<'a> From<&'a SparseMatrix> for MatrixRef<'a> {
    fn from(m: &'a SparseMatrix) -> Self {
        MatrixRef::Sparse(m)
    }
}

pub fn matmul<'a>(a: impl Into<MatrixRef<'a>>, b: &DenseMatrix) -> crate::Result<DenseMatrix> {
    match a.into() {
        MatrixRef::Dense(d) => d.matmul(b),
        MatrixRef::Sparse(s) => s.matmul_dense(b),
    }
}
