//! Sparse and dense linear algebra kernels.
//!
//! Everything the solver stack needs and nothing more:
//!
//! * [`CsrMatrix`] — compressed sparse row storage with matrix–vector products
//!   for the operator and its transpose, plus a two-pass [`CsrBuilder`] that
//!   assembles large matrices without materialising a global triplet list;
//! * [`DenseFactor`] — Cholesky / LU factorisations of small dense systems
//!   (coarse solves, reference solves) backed by `nalgebra`;
//! * [`PackedCholesky`] — symmetric factorisation in packed triangular storage
//!   for the many small patch matrices of the multilevel smoothers;
//! * [`HessenbergLs`] — incremental Givens least squares for the Hessenberg
//!   systems produced by the Arnoldi process.

mod csr;
mod dense;
mod hessenberg;

pub use csr::{CsrBuilder, CsrMatrix};
pub use dense::{DenseFactor, PackedCholesky};
pub use hessenberg::HessenbergLs;

use thiserror::Error;

/// Errors produced by the linear algebra kernels.
#[derive(Debug, Error)]
pub enum LinalgError {
    /// A triplet or access referenced an index outside the matrix.
    #[error("index ({row}, {col}) out of bounds for {nrows} x {ncols} matrix")]
    IndexOutOfBounds {
        row: usize,
        col: usize,
        nrows: usize,
        ncols: usize,
    },
    /// A Cholesky factorisation was requested for a matrix that is not
    /// symmetric positive definite to working precision.
    #[error("matrix is not symmetric positive definite")]
    NotSpd,
    /// An LU factorisation met a pivot that is zero to working precision.
    #[error("matrix is singular to working precision")]
    Singular,
    /// Operand shapes are inconsistent.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Euclidean inner product of two equally long slices.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm of a slice.
#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `x *= alpha`.
#[inline]
pub fn scal(alpha: f64, x: &mut [f64]) {
    for xi in x.iter_mut() {
        *xi *= alpha;
    }
}
