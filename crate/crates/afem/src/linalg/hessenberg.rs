//! Incremental Givens least squares for upper-Hessenberg systems.
//!
//! The Arnoldi process grows a `(K+1) x K` Hessenberg matrix one column per
//! iteration; the solver needs `min_y || beta e_1 - H y ||_2` and its optimal
//! residual after every column. Maintaining the QR factorisation with one new
//! Givens rotation per column makes each update `O(K)`.

/// Incremental least-squares solver for `min_y || beta e_1 - H y ||_2` with
/// upper-Hessenberg `H` built column by column.
#[derive(Debug, Clone)]
pub struct HessenbergLs {
    /// Columns of the triangularised matrix `R`; column `j` stores rows
    /// `0..=j`.
    r_cols: Vec<Vec<f64>>,
    /// Cosines and sines of the applied Givens rotations.
    cs: Vec<f64>,
    sn: Vec<f64>,
    /// The rotated right-hand side `Q^T (beta e_1)`; its last entry is the
    /// signed optimal residual.
    g: Vec<f64>,
    /// `|g_last|` recorded after every appended column.
    ls_history: Vec<f64>,
}

impl HessenbergLs {
    /// Starts a new system with right-hand side `beta * e_1`.
    pub fn new(beta: f64) -> Self {
        Self {
            r_cols: Vec::new(),
            cs: Vec::new(),
            sn: Vec::new(),
            g: vec![beta],
            ls_history: Vec::new(),
        }
    }

    /// Number of columns appended so far.
    pub fn ncols(&self) -> usize {
        self.r_cols.len()
    }

    /// Appends the next Hessenberg column (length `ncols() + 2`: rows
    /// `0..=ncols()+1`) and returns the new optimal least-squares residual.
    pub fn append_column(&mut self, column: &[f64]) -> f64 {
        let k = self.r_cols.len();
        assert_eq!(
            column.len(),
            k + 2,
            "Hessenberg column {k} must have {} entries",
            k + 2
        );
        let mut h = column.to_vec();
        // Apply the accumulated rotations to the new column.
        for (j, (&c, &s)) in self.cs.iter().zip(&self.sn).enumerate() {
            let (a, b) = (h[j], h[j + 1]);
            h[j] = c * a + s * b;
            h[j + 1] = -s * a + c * b;
        }
        // New rotation annihilating the subdiagonal entry.
        let (c, s) = givens(h[k], h[k + 1]);
        h[k] = c * h[k] + s * h[k + 1];
        h.truncate(k + 1);
        self.r_cols.push(h);
        self.cs.push(c);
        self.sn.push(s);
        // Rotate the right-hand side; the rotated-out part is the residual.
        self.g.push(0.0);
        let (a, b) = (self.g[k], self.g[k + 1]);
        self.g[k] = c * a + s * b;
        self.g[k + 1] = -s * a + c * b;
        let res = self.g[k + 1].abs();
        self.ls_history.push(res);
        res
    }

    /// Optimal residual after the most recent column (`beta` itself before any
    /// column is appended).
    pub fn ls_residual(&self) -> f64 {
        *self.ls_history.last().unwrap_or(&self.g[0].abs())
    }

    /// Residuals after each appended column, oldest first.
    pub fn ls_residual_history(&self) -> &[f64] {
        &self.ls_history
    }

    /// Solves the triangular system for the current minimiser `y`.
    pub fn solve(&self) -> Vec<f64> {
        let k = self.r_cols.len();
        let mut y = self.g[..k].to_vec();
        for i in (0..k).rev() {
            for j in (i + 1)..k {
                y[i] -= self.r_cols[j][i] * y[j];
            }
            y[i] /= self.r_cols[i][i];
        }
        y
    }
}

/// Givens rotation `(c, s)` with `c a + s b = r >= 0` and `-s a + c b = 0`.
fn givens(a: f64, b: f64) -> (f64, f64) {
    if b == 0.0 && a == 0.0 {
        (1.0, 0.0)
    } else {
        let r = a.hypot(b);
        (a / r, b / r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    const QR_ORACLE_TOL: f64 = 1e-12;

    #[test]
    fn single_column_exact_solve() {
        // H = [2; 0], rhs = 4 e_1: y = 2 with zero residual.
        let mut ls = HessenbergLs::new(4.0);
        let res = ls.append_column(&[2.0, 0.0]);
        assert!(res.abs() < 1e-15);
        let y = ls.solve();
        assert_eq!(y.len(), 1);
        assert!((y[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn single_column_with_residual() {
        // H = [1; 1], rhs = e_1: minimiser 1/2, residual 1/sqrt(2).
        let mut ls = HessenbergLs::new(1.0);
        let res = ls.append_column(&[1.0, 1.0]);
        assert!((res - 1.0 / 2.0_f64.sqrt()).abs() < 1e-15);
        let y = ls.solve();
        assert!((y[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn before_any_column_residual_is_beta() {
        let ls = HessenbergLs::new(3.5);
        assert_eq!(ls.ls_residual(), 3.5);
        assert!(ls.ls_residual_history().is_empty());
    }

    #[test]
    fn matches_dense_qr_oracle() {
        // 6 x 5 random Hessenberg vs a dense least-squares re-solve.
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..20 {
            let ncols = 5;
            let beta = rng.gen_range(0.5..2.0);
            let mut h = DMatrix::zeros(ncols + 1, ncols);
            for j in 0..ncols {
                for i in 0..=(j + 1) {
                    h[(i, j)] = rng.gen_range(-1.0..1.0);
                }
            }
            let mut ls = HessenbergLs::new(beta);
            let mut last_res = f64::NAN;
            for j in 0..ncols {
                let col: Vec<f64> = (0..=(j + 1)).map(|i| h[(i, j)]).collect();
                last_res = ls.append_column(&col);
            }
            let y = DVector::from_column_slice(&ls.solve());
            let mut rhs = DVector::zeros(ncols + 1);
            rhs[0] = beta;
            // Oracle: dense least squares via SVD on the full matrix.
            let svd = h.clone().svd(true, true);
            let y_ref = svd.solve(&rhs, 1e-14).expect("full-rank Hessenberg");
            let scale = 1.0 + y_ref.norm();
            for i in 0..ncols {
                assert!(
                    (y[i] - y_ref[i]).abs() < QR_ORACLE_TOL * scale,
                    "trial {trial} component {i}: {} vs {}",
                    y[i],
                    y_ref[i]
                );
            }
            let res_ref = (&h * &y_ref - &rhs).norm();
            assert!(
                (last_res - res_ref).abs() < QR_ORACLE_TOL * scale,
                "trial {trial} residual: {last_res} vs {res_ref}"
            );
        }
    }

    #[test]
    fn residual_history_is_monotone_nonincreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ls = HessenbergLs::new(1.0);
        for j in 0..8 {
            let col: Vec<f64> = (0..=(j + 1)).map(|_| rng.gen_range(-1.0..1.0)).collect();
            ls.append_column(&col);
        }
        let hist = ls.ls_residual_history();
        for w in hist.windows(2) {
            assert!(w[1] <= w[0] + 1e-15, "history must not increase: {hist:?}");
        }
    }
}
