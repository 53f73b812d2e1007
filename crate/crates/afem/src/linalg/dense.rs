//! Dense factorisations: coarse solves, reference solves, and the packed
//! symmetric factorisation used for the many small patch matrices.

use super::LinalgError;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn, LU};

/// A factorised dense matrix with a backward-stable solve.
///
/// Symmetric positive definite systems should use [`DenseFactor::cholesky`];
/// general systems use [`DenseFactor::lu`] (partial pivoting). Singular or
/// indefinite inputs are reported as errors instead of producing garbage.
#[derive(Debug, Clone)]
pub enum DenseFactor {
    Cholesky(Cholesky<f64, Dyn>),
    Lu(LU<f64, Dyn, Dyn>),
}

impl DenseFactor {
    /// Cholesky factorisation; fails with [`LinalgError::NotSpd`] if the matrix
    /// is not symmetric positive definite to working precision.
    pub fn cholesky(a: DMatrix<f64>) -> Result<Self, LinalgError> {
        assert_eq!(a.nrows(), a.ncols(), "cholesky: matrix must be square");
        Cholesky::new(a).map(Self::Cholesky).ok_or(LinalgError::NotSpd)
    }

    /// LU factorisation with partial pivoting; fails with
    /// [`LinalgError::Singular`] on a vanishing pivot.
    pub fn lu(a: DMatrix<f64>) -> Result<Self, LinalgError> {
        assert_eq!(a.nrows(), a.ncols(), "lu: matrix must be square");
        let n = a.nrows();
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let lu = LU::new(a);
        // Reject pivots at roundoff scale relative to the matrix magnitude.
        let tol = scale * (n as f64) * f64::EPSILON;
        for i in 0..n {
            if lu.u()[(i, i)].abs() <= tol {
                return Err(LinalgError::Singular);
            }
        }
        Ok(Self::Lu(lu))
    }

    /// Dimension of the factored matrix.
    pub fn dim(&self) -> usize {
        match self {
            Self::Cholesky(c) => c.l_dirty().nrows(),
            Self::Lu(lu) => lu.l().nrows(),
        }
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.dim(), "solve: rhs has wrong length");
        let mut v = DVector::from_column_slice(b);
        match self {
            Self::Cholesky(c) => c.solve_mut(&mut v),
            Self::Lu(lu) => {
                let ok = lu.solve_mut(&mut v);
                debug_assert!(ok, "singular LU factor escaped construction");
            }
        }
        b.copy_from_slice(v.as_slice());
    }

    /// Solves `A x = b` into a fresh vector.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Cholesky factor `L` of a small SPD matrix in packed lower-triangular
/// storage (`n (n + 1) / 2` scalars, row by row).
///
/// Patch smoothers keep hundreds of thousands of these; the packed layout
/// nearly halves their memory compared with full square storage.
#[derive(Debug, Clone)]
pub struct PackedCholesky {
    n: usize,
    /// `l[i * (i + 1) / 2 + j]` is `L[i][j]` for `j <= i`.
    l: Vec<f64>,
}

impl PackedCholesky {
    /// Factorises a symmetric matrix given in packed lower-triangular storage;
    /// the input layout matches the factor layout.
    pub fn new(n: usize, packed: &[f64]) -> Result<Self, LinalgError> {
        assert_eq!(packed.len(), n * (n + 1) / 2, "packed length mismatch");
        let mut l = packed.to_vec();
        for i in 0..n {
            let row_i = i * (i + 1) / 2;
            for j in 0..=i {
                let row_j = j * (j + 1) / 2;
                let mut sum = l[row_i + j];
                for k in 0..j {
                    sum -= l[row_i + k] * l[row_j + k];
                }
                if j < i {
                    l[row_i + j] = sum / l[row_j + j];
                } else {
                    if sum <= 0.0 {
                        return Err(LinalgError::NotSpd);
                    }
                    l[row_i + i] = sum.sqrt();
                }
            }
        }
        Ok(Self { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b` in place via forward and backward substitution.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n, "solve: rhs has wrong length");
        // L y = b
        for i in 0..self.n {
            let row = i * (i + 1) / 2;
            let mut sum = b[i];
            for j in 0..i {
                sum -= self.l[row + j] * b[j];
            }
            b[i] = sum / self.l[row + i];
        }
        // L^T x = y
        for i in (0..self.n).rev() {
            let mut sum = b[i];
            for j in (i + 1)..self.n {
                sum -= self.l[j * (j + 1) / 2 + i] * b[j];
            }
            b[i] = sum / self.l[i * (i + 1) / 2 + i];
        }
    }

    /// Consumes the factor, returning its packed storage (for flat pooling).
    pub fn into_raw(self) -> Vec<f64> {
        self.l
    }

    /// Rebuilds a factor from storage produced by [`PackedCholesky::into_raw`].
    pub fn from_raw(n: usize, l: Vec<f64>) -> Self {
        assert_eq!(l.len(), n * (n + 1) / 2);
        Self { n, l }
    }

    /// Solves in place using a raw packed factor without constructing the type;
    /// used by pooled storage where factors live in one flat buffer.
    pub fn solve_raw(n: usize, l: &[f64], b: &mut [f64]) {
        debug_assert_eq!(l.len(), n * (n + 1) / 2);
        debug_assert_eq!(b.len(), n);
        for i in 0..n {
            let row = i * (i + 1) / 2;
            let mut sum = b[i];
            for j in 0..i {
                sum -= l[row + j] * b[j];
            }
            b[i] = sum / l[row + i];
        }
        for i in (0..n).rev() {
            let mut sum = b[i];
            for j in (i + 1)..n {
                sum -= l[j * (j + 1) / 2 + i] * b[j];
            }
            b[i] = sum / l[i * (i + 1) / 2 + i];
        }
    }
}
