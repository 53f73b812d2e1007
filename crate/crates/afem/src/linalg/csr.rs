//! Compressed sparse row matrices.
//!
//! Column indices are stored as `u32`: the meshes this crate targets stay far
//! below 2^32 unknowns and the narrower index type halves the index memory of
//! the largest assembled systems.

use super::LinalgError;

/// Sparse matrix in compressed sparse row format.
///
/// Rows hold strictly increasing column indices; duplicate entries are summed
/// during construction. Explicit zeros are kept (they are structurally
/// meaningful for pattern-based consumers).
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self, LinalgError> {
        let mut builder = CsrBuilder::new(nrows, ncols);
        for &(r, c, _) in triplets {
            if r >= nrows || c >= ncols {
                return Err(LinalgError::IndexOutOfBounds {
                    row: r,
                    col: c,
                    nrows,
                    ncols,
                });
            }
            builder.count(r, 1);
        }
        builder.begin_fill();
        for &(r, c, v) in triplets {
            builder.push(r, c, v);
        }
        Ok(builder.finish())
    }

    /// Builds directly from raw CSR arrays with sorted, unique columns per row.
    pub fn from_sorted_rows(
        nrows: usize,
        ncols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<u32>,
        vals: Vec<f64>,
    ) -> Result<Self, LinalgError> {
        if row_ptr.len() != nrows + 1 || col_idx.len() != vals.len() || row_ptr[nrows] != vals.len()
        {
            return Err(LinalgError::DimensionMismatch(
                "inconsistent CSR arrays".into(),
            ));
        }
        for i in 0..nrows {
            let (lo, hi) = (row_ptr[i], row_ptr[i + 1]);
            if lo > hi || hi > vals.len() {
                return Err(LinalgError::DimensionMismatch(
                    "row pointers not monotone".into(),
                ));
            }
            for w in col_idx[lo..hi].windows(2) {
                if w[0] >= w[1] {
                    return Err(LinalgError::DimensionMismatch(
                        "row columns not strictly increasing".into(),
                    ));
                }
            }
            if hi > lo && col_idx[hi - 1] as usize >= ncols {
                return Err(LinalgError::IndexOutOfBounds {
                    row: i,
                    col: col_idx[hi - 1] as usize,
                    nrows,
                    ncols,
                });
            }
        }
        Ok(Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            vals,
        })
    }

    /// Identity matrix of dimension `n`.
    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n as u32).collect(),
            vals: vec![1.0; n],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    /// Number of stored entries.
    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[lo..hi], &self.vals[lo..hi])
    }

    /// `y = A x`.
    pub fn spmv(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols, "spmv: x has wrong length");
        assert_eq!(y.len(), self.nrows, "spmv: y has wrong length");
        for i in 0..self.nrows {
            let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
            let mut acc = 0.0;
            for (c, v) in self.col_idx[lo..hi].iter().zip(&self.vals[lo..hi]) {
                acc += v * x[*c as usize];
            }
            y[i] = acc;
        }
    }

    /// `y = A^T x` without forming the transpose.
    pub fn spmv_transpose(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.nrows, "spmv_transpose: x has wrong length");
        assert_eq!(y.len(), self.ncols, "spmv_transpose: y has wrong length");
        y.fill(0.0);
        for i in 0..self.nrows {
            let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            for (c, v) in self.col_idx[lo..hi].iter().zip(&self.vals[lo..hi]) {
                y[*c as usize] += v * xi;
            }
        }
    }

    /// Main diagonal (zeros where no entry is stored).
    pub fn diagonal(&self) -> Vec<f64> {
        let n = self.nrows.min(self.ncols);
        let mut d = vec![0.0; n];
        for (i, di) in d.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            if let Ok(k) = cols.binary_search(&(i as u32)) {
                *di = vals[k];
            }
        }
        d
    }

    /// Dense copy; intended for small matrices in tests and oracles.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                m[(i, *c as usize)] = *v;
            }
        }
        m
    }
}

/// Two-pass CSR assembler.
///
/// Pass one declares an upper bound on the number of entries per row
/// ([`CsrBuilder::count`]); [`CsrBuilder::begin_fill`] allocates once; pass two
/// streams the entries ([`CsrBuilder::push`]); [`CsrBuilder::finish`] sorts each
/// row, sums duplicates in place, and shrinks the storage. Peak memory is the
/// declared bound — no global triplet list is ever held.
#[derive(Debug)]
pub struct CsrBuilder {
    nrows: usize,
    ncols: usize,
    /// During counting: entries declared per row. After `begin_fill`: the next
    /// free slot for each row.
    cursor: Vec<usize>,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    vals: Vec<f64>,
    filling: bool,
}

impl CsrBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            cursor: vec![0; nrows],
            row_ptr: Vec::new(),
            col_idx: Vec::new(),
            vals: Vec::new(),
            filling: false,
        }
    }

    /// Declares `n` upcoming entries for `row` (duplicates allowed).
    #[inline]
    pub fn count(&mut self, row: usize, n: usize) {
        debug_assert!(!self.filling, "count() after begin_fill()");
        self.cursor[row] += n;
    }

    /// Freezes the counts and allocates the entry storage.
    pub fn begin_fill(&mut self) {
        assert!(!self.filling, "begin_fill() called twice");
        let mut row_ptr = Vec::with_capacity(self.nrows + 1);
        row_ptr.push(0);
        let mut acc = 0usize;
        for (i, c) in self.cursor.iter_mut().enumerate() {
            let n = *c;
            *c = acc; // becomes the fill cursor for row i
            acc += n;
            row_ptr.push(acc);
            let _ = i;
        }
        self.row_ptr = row_ptr;
        self.col_idx = vec![0; acc];
        self.vals = vec![0.0; acc];
        self.filling = true;
    }

    /// Streams one entry; must stay within the declared count for its row.
    #[inline]
    pub fn push(&mut self, row: usize, col: usize, val: f64) {
        debug_assert!(self.filling, "push() before begin_fill()");
        debug_assert!(col < self.ncols);
        let slot = self.cursor[row];
        debug_assert!(slot < self.row_ptr[row + 1], "row {row} overfilled");
        self.col_idx[slot] = col as u32;
        self.vals[slot] = val;
        self.cursor[row] = slot + 1;
    }

    /// Sorts rows, merges duplicates, and produces the matrix.
    pub fn finish(mut self) -> CsrMatrix {
        assert!(self.filling, "finish() before begin_fill()");
        let mut scratch: Vec<(u32, f64)> = Vec::new();
        let mut write = 0usize;
        let mut new_row_ptr = Vec::with_capacity(self.nrows + 1);
        new_row_ptr.push(0);
        for i in 0..self.nrows {
            let lo = self.row_ptr[i];
            let hi = self.cursor[i]; // rows may be underfilled; use the cursor
            debug_assert!(hi <= self.row_ptr[i + 1]);
            scratch.clear();
            scratch.extend(
                self.col_idx[lo..hi]
                    .iter()
                    .copied()
                    .zip(self.vals[lo..hi].iter().copied()),
            );
            scratch.sort_unstable_by_key(|&(c, _)| c);
            // Merge duplicates into the compacted prefix; `write <= lo` always,
            // so the in-place copy never clobbers unread data.
            for &(c, v) in &scratch {
                if write > new_row_ptr[i] && self.col_idx[write - 1] == c {
                    self.vals[write - 1] += v;
                } else {
                    self.col_idx[write] = c;
                    self.vals[write] = v;
                    write += 1;
                }
            }
            new_row_ptr.push(write);
        }
        self.col_idx.truncate(write);
        self.vals.truncate(write);
        self.col_idx.shrink_to_fit();
        self.vals.shrink_to_fit();
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            row_ptr: new_row_ptr,
            col_idx: self.col_idx,
            vals: self.vals,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    const DENSE_ORACLE_TOL: f64 = 1e-13;

    #[test]
    fn spmv_two_by_two() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (1, 0, 1.0), (1, 1, 3.0)]).unwrap();
        let mut y = [0.0; 2];
        a.spmv(&[1.0, 1.0], &mut y);
        assert_eq!(y, [2.0, 4.0]);
    }

    #[test]
    fn duplicates_are_summed() {
        let a =
            CsrMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (0, 0, 0.5), (1, 1, -1.0)]).unwrap();
        assert_eq!(a.nnz(), 2);
        let (cols, vals) = a.row(0);
        assert_eq!(cols, &[0]);
        assert_eq!(vals, &[2.5]);
    }

    #[test]
    fn out_of_bounds_triplet_is_rejected() {
        let r = CsrMatrix::from_triplets(2, 2, &[(0, 2, 1.0)]);
        assert!(r.is_err());
    }

    fn random_csr(rng: &mut ChaCha8Rng, nrows: usize, ncols: usize) -> CsrMatrix {
        let mut triplets = Vec::new();
        for i in 0..nrows {
            for j in 0..ncols {
                if rng.gen_bool(0.3) {
                    triplets.push((i, j, rng.gen_range(-1.0..1.0)));
                }
            }
        }
        CsrMatrix::from_triplets(nrows, ncols, &triplets).unwrap()
    }

    #[test]
    fn spmv_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_csr(&mut rng, 50, 50);
        let dense = a.to_dense();
        let x: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut y = vec![0.0; 50];
        a.spmv(&x, &mut y);
        let yd = &dense * nalgebra::DVector::from_column_slice(&x);
        for i in 0..50 {
            assert!((y[i] - yd[i]).abs() < DENSE_ORACLE_TOL, "row {i}");
        }
    }

    #[test]
    fn transpose_action_adjoint_identity() {
        // (A^T y, x) == (y, A x) for random rectangular matrices.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = random_csr(&mut rng, 23, 17);
            let x: Vec<f64> = (0..17).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..23).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut ax = vec![0.0; 23];
            a.spmv(&x, &mut ax);
            let mut aty = vec![0.0; 17];
            a.spmv_transpose(&y, &mut aty);
            let lhs = super::super::dot(&aty, &x);
            let rhs = super::super::dot(&y, &ax);
            assert!((lhs - rhs).abs() < 1e-13 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn builder_matches_from_triplets() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut triplets = Vec::new();
        for _ in 0..200 {
            triplets.push((
                rng.gen_range(0..12usize),
                rng.gen_range(0..9usize),
                rng.gen_range(-1.0..1.0),
            ));
        }
        let via_triplets = CsrMatrix::from_triplets(12, 9, &triplets).unwrap();
        let mut b = CsrBuilder::new(12, 9);
        for &(r, _, _) in &triplets {
            b.count(r, 1);
        }
        b.begin_fill();
        for &(r, c, v) in &triplets {
            b.push(r, c, v);
        }
        let via_builder = b.finish();
        assert_eq!(via_builder.nnz(), via_triplets.nnz());
        let d1 = via_triplets.to_dense();
        let d2 = via_builder.to_dense();
        assert!((&d1 - &d2).norm() < 1e-14);
    }

    #[test]
    fn diagonal_and_identity() {
        let id = CsrMatrix::identity(4);
        assert_eq!(id.diagonal(), vec![1.0; 4]);
        let a = CsrMatrix::from_triplets(3, 3, &[(0, 0, 2.0), (1, 2, 5.0), (2, 2, -4.0)]).unwrap();
        assert_eq!(a.diagonal(), vec![2.0, 0.0, -4.0]);
    }

    #[test]
    fn underfilled_builder_rows_are_compacted() {
        let mut b = CsrBuilder::new(3, 3);
        b.count(0, 5); // declare more than we push
        b.count(2, 2);
        b.begin_fill();
        b.push(0, 1, 1.0);
        b.push(2, 0, 2.0);
        b.push(2, 0, 3.0);
        let a = b.finish();
        assert_eq!(a.nnz(), 2);
        assert_eq!(a.row(0).0, &[1]);
        assert_eq!(a.row(1).0, &[] as &[u32]);
        assert_eq!(a.row(2).1, &[5.0]);
    }
}
