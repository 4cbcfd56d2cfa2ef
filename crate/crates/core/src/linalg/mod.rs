//! Sparse symmetric assembly and factorisation, plus small dense kernels.

mod dense;
mod sparse;

use thiserror::Error;

pub use dense::{lu_solve, symmetric_eigen, DenseMatrix};
pub use sparse::{SparseLdl, SymmetricPattern};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("zero pivot at column {0}")]
    ZeroPivot(usize),
    #[error("fill-reducing ordering failed: {0}")]
    Ordering(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("singular dense matrix")]
    Singular,
}
