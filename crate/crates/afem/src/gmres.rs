//! Restarted GMRES in the preconditioner-weighted inner product.
//!
//! The solver runs Arnoldi with the scalar product induced by the inverse of
//! an SPD preconditioner `P`. Each basis vector is stored as a pair: the
//! unpreconditioned vector `vt` and its preconditioned image `v = P vt`,
//! which makes every weighted inner product a plain Euclidean one,
//! `(w, v)_{P^-1} = (wt, v)_2`. After `k_max` steps the window is discarded
//! and reseeded from the current residual, so memory and per-step cost stay
//! bounded independently of the iteration count.
//!
//! Termination is controlled by a caller-supplied tolerance function
//! `lambda`, re-evaluated at every iterate; this is how the adaptive driver
//! couples the algebraic stop to the current error estimate.

use crate::linalg::{axpy, dot, CsrMatrix, HessenbergLs};
use crate::precond::{PrecondError, Preconditioner};
use thiserror::Error;

/// Hard guard against non-convergent configurations.
pub const DEFAULT_MAX_ITER: usize = 100_000;

/// One extra orthogonalization pass when the weighted norm shrinks by more
/// than this factor during a Gram-Schmidt sweep.
const REORTH_DROP: f64 = 1e3;

/// Relative subdiagonal threshold below which the Krylov space is declared
/// invariant (lucky breakdown).
const BREAKDOWN_REL: f64 = 1e-14;

#[derive(Debug, Error)]
pub enum GmresError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("no convergence within {0} iterations")]
    IterationCap(usize),
    #[error(transparent)]
    Precond(#[from] PrecondError),
}

/// The preconditioner actions the solver needs: the application `s = P r`
/// and the weighted norm `(s, r)^(1/2)`.
pub trait Weighting {
    fn apply(&self, r: &[f64]) -> Result<Vec<f64>, PrecondError>;
    fn pinner(&self, s: &[f64], r: &[f64]) -> Result<f64, PrecondError>;
}

impl Weighting for Preconditioner {
    fn apply(&self, r: &[f64]) -> Result<Vec<f64>, PrecondError> {
        Preconditioner::apply(self, r)
    }

    fn pinner(&self, s: &[f64], r: &[f64]) -> Result<f64, PrecondError> {
        Preconditioner::pinner(self, s, r)
    }
}

/// Result of a solver run.
#[derive(Debug, Clone)]
pub struct GmresOutcome {
    pub x: Vec<f64>,
    /// Weighted residual norms, one entry per iteration `k = 1..=k_lower`.
    pub history: Vec<f64>,
    /// Least-squares residuals aligned with `history`; in exact arithmetic
    /// both sequences are the same number.
    pub ls_history: Vec<f64>,
    /// Weighted norm of the initial residual.
    pub s0_norm: f64,
    /// First iteration index satisfying the stopping criterion (0 when the
    /// initial guess already satisfies it).
    pub k_lower: usize,
    /// Largest number of simultaneously retained basis vectors (both
    /// families counted).
    pub peak_basis: usize,
    /// Number of exact-window (lucky breakdown) events.
    pub lucky_breakdowns: usize,
}

/// Steps since the last restart for iteration `k`, in `1..=k_max`.
pub fn window_step(k: usize, k_max: usize) -> usize {
    (k - 1) % k_max + 1
}

/// Number of completed restarts before iteration `k`.
pub fn restart_index(k: usize, k_max: usize) -> usize {
    k / k_max
}

/// Solves `B x = d` with restarted GMRES in the `P`-weighted inner product,
/// stopping at the first iterate `k ≥ 1` whose weighted residual norm is at
/// most `lambda(x^k)`; only an exactly zero initial residual short-circuits
/// with `k̲ = 0`.
pub fn pgmres<W: Weighting + ?Sized>(
    b: &CsrMatrix,
    p: &W,
    d: &[f64],
    x0: &[f64],
    lambda: impl FnMut(&[f64]) -> f64,
    k_max: usize,
) -> Result<GmresOutcome, GmresError> {
    pgmres_with_cap(b, p, d, x0, lambda, k_max, DEFAULT_MAX_ITER)
}

/// [`pgmres`] with an explicit iteration cap.
pub fn pgmres_with_cap<W: Weighting + ?Sized>(
    b: &CsrMatrix,
    p: &W,
    d: &[f64],
    x0: &[f64],
    lambda: impl FnMut(&[f64]) -> f64,
    k_max: usize,
    max_iter: usize,
) -> Result<GmresOutcome, GmresError> {
    pgmres_probed(b, p, d, x0, lambda, k_max, max_iter, |_, _, _| {})
}

/// Worker with a test probe invoked after every basis change with the
/// current iteration index and both basis families.
#[allow(clippy::too_many_arguments)]
pub(crate) fn pgmres_probed<W: Weighting + ?Sized>(
    b: &CsrMatrix,
    p: &W,
    d: &[f64],
    x0: &[f64],
    mut lambda: impl FnMut(&[f64]) -> f64,
    k_max: usize,
    max_iter: usize,
    mut probe: impl FnMut(usize, &[Vec<f64>], &[Vec<f64>]),
) -> Result<GmresOutcome, GmresError> {
    let n = b.nrows();
    if b.ncols() != n {
        return Err(GmresError::Dimension(format!(
            "matrix is {}x{}, must be square",
            n,
            b.ncols()
        )));
    }
    if d.len() != n || x0.len() != n {
        return Err(GmresError::Dimension(format!(
            "system size {n}, right-hand side {}, initial guess {}",
            d.len(),
            x0.len()
        )));
    }
    if k_max == 0 {
        return Err(GmresError::InvalidArgument("k_max must be >= 1".into()));
    }

    let residual = |x: &[f64], out: &mut Vec<f64>| {
        out.resize(n, 0.0);
        b.spmv(x, out);
        for (o, &di) in out.iter_mut().zip(d) {
            *o = di - *o;
        }
    };
    let check_tol = |t: f64| -> Result<f64, GmresError> {
        if !t.is_finite() || t < 0.0 {
            return Err(GmresError::InvalidArgument(format!(
                "tolerance function returned {t}"
            )));
        }
        Ok(t)
    };

    let mut r = Vec::new();
    residual(x0, &mut r);
    let mut s = p.apply(&r)?;
    let mut s_norm = p.pinner(&s, &r)?;
    if !s_norm.is_finite() {
        return Err(GmresError::NonFinite(format!(
            "initial weighted residual norm is {s_norm}"
        )));
    }
    let s0_norm = s_norm;
    // The tolerance function is evaluated once per iterate, starting with
    // the initial guess; its value is validated but never used as a k = 0
    // exit.  The loop below always performs at least one step, so `k̲ ≥ 1`
    // whenever the initial residual is nonzero.  An exactly zero initial
    // residual (an exact nested initial guess) must return here, because
    // step (a) would otherwise divide by zero when seeding the basis.
    check_tol(lambda(x0))?;
    if s_norm == 0.0 {
        return Ok(GmresOutcome {
            x: x0.to_vec(),
            history: Vec::new(),
            ls_history: Vec::new(),
            s0_norm,
            k_lower: 0,
            peak_basis: 0,
            lucky_breakdowns: 0,
        });
    }

    // Window state: iterate and residual norm at the window start, the
    // paired basis, and the incremental least-squares factorization.
    let mut x_window = x0.to_vec();
    let mut vt: Vec<Vec<f64>> = vec![r.iter().map(|&ri| ri / s_norm).collect()];
    let mut v: Vec<Vec<f64>> = vec![s.iter().map(|&si| si / s_norm).collect()];
    let mut ls = HessenbergLs::new(s_norm);
    let mut history = Vec::new();
    let mut ls_history = Vec::new();
    let mut peak_basis = vt.len() + v.len();
    let mut lucky_breakdowns = 0usize;
    let mut x = vec![0.0; n];
    probe(0, &vt, &v);

    for k in 1.. {
        if k > max_iter {
            return Err(GmresError::IterationCap(max_iter));
        }
        // New Krylov direction and its preconditioned image.
        let mut wt = vec![0.0; n];
        b.spmv(v.last().unwrap(), &mut wt);
        let mut w = p.apply(&wt)?;
        let norm_before = p.pinner(&w, &wt)?;
        // Gram-Schmidt against the window, in the weighted product.
        let kw = v.len();
        let mut h = vec![0.0; kw + 1];
        for j in 0..kw {
            let hj = dot(&wt, &v[j]);
            h[j] = hj;
            axpy(-hj, &vt[j], &mut wt);
            axpy(-hj, &v[j], &mut w);
        }
        let mut h_last = p.pinner(&w, &wt)?;
        if h_last * REORTH_DROP < norm_before {
            for (j, hj) in h.iter_mut().enumerate().take(kw) {
                let c = dot(&wt, &v[j]);
                *hj += c;
                axpy(-c, &vt[j], &mut wt);
                axpy(-c, &v[j], &mut w);
            }
            h_last = p.pinner(&w, &wt)?;
        }
        if !h_last.is_finite() {
            return Err(GmresError::NonFinite(format!(
                "subdiagonal entry at iteration {k} is {h_last}"
            )));
        }
        let lucky = h_last <= BREAKDOWN_REL * norm_before;
        if lucky {
            lucky_breakdowns += 1;
        }
        h[kw] = h_last;
        let ls_res = ls.append_column(&h);

        // Iterate from the windowed least-squares minimum, with the residual
        // recomputed explicitly.
        let y = ls.solve();
        x.copy_from_slice(&x_window);
        for (yj, vj) in y.iter().zip(&v) {
            axpy(*yj, vj, &mut x);
        }
        residual(&x, &mut r);
        s = p.apply(&r)?;
        s_norm = p.pinner(&s, &r)?;
        if !s_norm.is_finite() {
            return Err(GmresError::NonFinite(format!(
                "weighted residual norm at iteration {k} is {s_norm}"
            )));
        }
        history.push(s_norm);
        ls_history.push(ls_res);

        let tol = check_tol(lambda(&x))?;
        if s_norm <= tol {
            probe(k, &vt, &v);
            return Ok(GmresOutcome {
                x,
                history,
                ls_history,
                s0_norm,
                k_lower: k,
                peak_basis,
                lucky_breakdowns,
            });
        }

        if v.len() == k_max || lucky {
            // Restart: discard the window, reseed from the current residual.
            x_window.copy_from_slice(&x);
            vt.clear();
            v.clear();
            vt.push(r.iter().map(|&ri| ri / s_norm).collect());
            v.push(s.iter().map(|&si| si / s_norm).collect());
            ls = HessenbergLs::new(s_norm);
        } else {
            vt.push(wt.iter().map(|&wi| wi / h_last).collect());
            v.push(w.iter().map(|&wi| wi / h_last).collect());
        }
        peak_basis = peak_basis.max(vt.len() + v.len());
        probe(k, &vt, &v);
    }
    unreachable!("loop exits through the cap or the stopping criterion");
}

/// Consecutive-norm ratios of a residual history.
#[derive(Debug, Clone)]
pub struct Contraction {
    pub ratios: Vec<f64>,
    /// Set when a zero norm forced a ratio to be reported as 0.
    pub lucky_breakdown: bool,
}

/// Ratios `history[i+1] / history[i]`; a zero denominator reports 0 and
/// raises the lucky-breakdown flag.
pub fn contraction_factors(history: &[f64]) -> Result<Contraction, GmresError> {
    if history.len() < 2 {
        return Err(GmresError::Dimension(format!(
            "contraction factors need at least two entries, got {}",
            history.len()
        )));
    }
    let mut lucky_breakdown = false;
    let ratios = history
        .windows(2)
        .map(|w| {
            if w[0] == 0.0 {
                lucky_breakdown = true;
                0.0
            } else {
                w[1] / w[0]
            }
        })
        .collect();
    Ok(Contraction {
        ratios,
        lucky_breakdown,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fespace::{assemble_b, assemble_rhs, galerkin_solve_direct, FeSpace, PdeData};
    use crate::linalg::{norm2, DenseFactor};
    use crate::mesh::{MarkSet, Triangulation};
    use crate::precond::Variant;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    /// Exact-inverse weighting for dense SPD fixtures.
    struct ExactInverse {
        factor: DenseFactor,
    }

    impl Weighting for ExactInverse {
        fn apply(&self, r: &[f64]) -> Result<Vec<f64>, PrecondError> {
            Ok(self.factor.solve(r))
        }

        fn pinner(&self, s: &[f64], r: &[f64]) -> Result<f64, PrecondError> {
            Ok(dot(s, r).max(0.0).sqrt())
        }
    }

    /// Euclidean weighting (plain GMRES).
    struct IdentityW;

    impl Weighting for IdentityW {
        fn apply(&self, r: &[f64]) -> Result<Vec<f64>, PrecondError> {
            Ok(r.to_vec())
        }

        fn pinner(&self, s: &[f64], r: &[f64]) -> Result<f64, PrecondError> {
            Ok(dot(s, r).max(0.0).sqrt())
        }
    }

    fn csr_from_dense(m: &nalgebra::DMatrix<f64>) -> CsrMatrix {
        let (nr, nc) = m.shape();
        let mut triplets = Vec::new();
        for i in 0..nr {
            for j in 0..nc {
                if m[(i, j)] != 0.0 {
                    triplets.push((i, j, m[(i, j)]));
                }
            }
        }
        CsrMatrix::from_triplets(nr, nc, &triplets).unwrap()
    }

    fn random_spd(n: usize, seed: u64) -> nalgebra::DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = nalgebra::DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        &g * g.transpose() + nalgebra::DMatrix::identity(n, n) * n as f64
    }

    /// Level-0 L-shape system with the benchmark convection field.
    fn lshape_system(p: usize) -> (CsrMatrix, Vec<f64>, Preconditioner) {
        let data = PdeData::benchmark();
        let mesh = Arc::new(Triangulation::lshape());
        let space = Arc::new(FeSpace::new(Arc::clone(&mesh), p).unwrap());
        let b = assemble_b(&space, &data).unwrap();
        let d = assemble_rhs(&space, &data).unwrap();
        let pc = Preconditioner::build(
            &[mesh],
            p,
            &data,
            Variant::AdditiveSchwarz,
        )
        .unwrap();
        (b, d, pc)
    }

    /// A three-level refined L-shape system for restart exercises.
    fn refined_system(p: usize, variant: Variant) -> (CsrMatrix, Vec<f64>, Preconditioner) {
        let data = PdeData::benchmark();
        let mut meshes = vec![Arc::new(Triangulation::lshape())];
        for _ in 0..3 {
            let prev = meshes.last().unwrap();
            let marks: Vec<u32> = (0..prev.num_elements())
                .filter(|&t| {
                    prev.element(t)
                        .iter()
                        .any(|&z| prev.vertex(z as usize) == [0.0, 0.0])
                })
                .map(|t| t as u32)
                .collect();
            let refined = Arc::new(prev.refine(&MarkSet::new(marks)).unwrap());
            // One extra uniform level to grow the system a little.
            let uniform = Arc::new(refined.refine_uniform().unwrap());
            meshes.push(refined);
            meshes.push(uniform);
        }
        let space = Arc::new(FeSpace::new(Arc::clone(meshes.last().unwrap()), p).unwrap());
        let b = assemble_b(&space, &data).unwrap();
        let d = assemble_rhs(&space, &data).unwrap();
        let pc = Preconditioner::build(&meshes, p, &data, variant).unwrap();
        (b, d, pc)
    }

    #[test]
    fn exact_initial_guess_returns_at_once() {
        let (b, _, pc) = lshape_system(2);
        let n = b.nrows();
        // Choose the solution, derive the right-hand side from it: the
        // residual of x0 is then exactly zero in floating point.
        let x_star: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut d = vec![0.0; n];
        b.spmv(&x_star, &mut d);
        let out = pgmres(&b, &pc, &d, &x_star, |_| 0.0, 5).unwrap();
        assert_eq!(out.k_lower, 0);
        assert!(out.history.is_empty());
        assert_eq!(out.x, x_star);
        assert_eq!(out.s0_norm, 0.0);
    }

    #[test]
    fn exact_inverse_preconditioner_converges_in_one_step() {
        let a = random_spd(40, 17);
        let b = csr_from_dense(&a);
        let p = ExactInverse {
            factor: DenseFactor::cholesky(a.clone()).unwrap(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        let d: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x0 = vec![0.0; 40];
        // Initial weighted norm, computed the same way the solver does.
        let s0 = p.apply(&d).unwrap();
        let s0n = p.pinner(&s0, &d).unwrap();
        let out = pgmres(&b, &p, &d, &x0, |_| 1e-12 * s0n, 10).unwrap();
        assert_eq!(out.k_lower, 1, "PB = I solves in a single step");
        assert!(out.history[0] <= 1e-12 * s0n);
    }

    #[test]
    fn agrees_with_direct_solve_on_coarse_level() {
        for p in [1, 2] {
            let (b, d, pc) = lshape_system(p);
            let x_direct = galerkin_solve_direct(&b, &d).unwrap();
            let s0 = pc.apply(&d).unwrap();
            let s0n = pc.pinner(&s0, &d).unwrap();
            let x0 = vec![0.0; d.len()];
            let out = pgmres(&b, &pc, &d, &x0, |_| 1e-10 * s0n, 5).unwrap();
            // Energy-norm comparison through the principal part.
            let a = pc.hierarchy().fine_matrix();
            let mut diff = out.x.clone();
            axpy(-1.0, &x_direct, &mut diff);
            let mut a_diff = vec![0.0; diff.len()];
            a.spmv(&diff, &mut a_diff);
            let err = dot(&diff, &a_diff).max(0.0).sqrt();
            let mut a_x = vec![0.0; x_direct.len()];
            a.spmv(&x_direct, &mut a_x);
            let scale = dot(&x_direct, &a_x).sqrt();
            assert!(err <= 1e-8 * scale.max(1.0), "p={p}: energy gap {err}");
        }
    }

    #[test]
    fn history_nonincreasing_per_window_and_matches_ls_residual() {
        for variant in [Variant::AdditiveSchwarz, Variant::SymmetricMultigrid] {
            let (b, d, pc) = refined_system(2, variant);
            let s0 = pc.apply(&d).unwrap();
            let s0n = pc.pinner(&s0, &d).unwrap();
            let x0 = vec![0.0; d.len()];
            let k_max = 5;
            let out = pgmres(&b, &pc, &d, &x0, |_| 1e-9 * s0n, k_max).unwrap();
            assert!(out.k_lower > k_max, "need at least one restart to be useful");
            let mut prev = out.s0_norm;
            for (i, (&h, &l)) in out.history.iter().zip(&out.ls_history).enumerate() {
                let k = i + 1;
                // Two expressions of the same number; once the residual sits
                // many orders below the initial one, the explicitly
                // recomputed value carries an absolute roundoff floor
                // proportional to the problem scale.
                assert!(
                    (h - l).abs() <= 1e-9 * h.max(l) + 1e-13 * out.s0_norm,
                    "k={k}: explicit {h} vs least-squares {l}"
                );
                // Within a window the optimal residual cannot grow.
                if window_step(k, k_max) > 1 {
                    assert!(h <= prev * (1.0 + 1e-12), "k={k}: {h} > {prev}");
                }
                prev = h;
            }
        }
    }

    #[test]
    fn weighted_orthonormality_and_window_bounds() {
        let (b, d, pc) = refined_system(2, Variant::AdditiveSchwarz);
        let s0 = pc.apply(&d).unwrap();
        let s0n = pc.pinner(&s0, &d).unwrap();
        let x0 = vec![0.0; d.len()];
        let k_max = 4;
        let out = pgmres_probed(
            &b,
            &pc,
            &d,
            &x0,
            |_| 1e-9 * s0n,
            k_max,
            DEFAULT_MAX_ITER,
            |k, vt, v| {
                assert_eq!(vt.len(), v.len());
                assert!(v.len() <= k_max, "window overflow at iteration {k}");
                if k > 0 && k % k_max == 0 {
                    assert_eq!(v.len(), 1, "restart at {k} must reseed the window");
                }
                for (i, vti) in vt.iter().enumerate() {
                    for (j, vj) in v.iter().enumerate() {
                        let ip = dot(vti, vj);
                        let expect = if i == j { 1.0 } else { 0.0 };
                        assert!(
                            (ip - expect).abs() <= 1e-10,
                            "iteration {k}: (vt^{i}, v^{j}) = {ip}"
                        );
                    }
                }
            },
        )
        .unwrap();
        assert!(out.k_lower > 2 * k_max, "want several restarts");
        assert!(out.peak_basis <= 2 * (k_max + 1));
        assert_eq!(out.lucky_breakdowns, 0);
    }

    #[test]
    fn iteration_cap_is_an_error() {
        let (b, d, pc) = lshape_system(1);
        let x0 = vec![0.0; d.len()];
        let err = pgmres_with_cap(&b, &pc, &d, &x0, |_| 0.0, 3, 10).unwrap_err();
        assert!(matches!(err, GmresError::IterationCap(10)));
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let (b, d, pc) = lshape_system(1);
        let x0 = vec![0.0; d.len()];
        assert!(matches!(
            pgmres(&b, &pc, &d[..d.len() - 1], &x0, |_| 0.0, 5),
            Err(GmresError::Dimension(_))
        ));
        assert!(matches!(
            pgmres(&b, &pc, &d, &x0, |_| 0.0, 0),
            Err(GmresError::InvalidArgument(_))
        ));
        assert!(matches!(
            pgmres(&b, &pc, &d, &x0, |_| -1.0, 5),
            Err(GmresError::InvalidArgument(_))
        ));
        assert!(matches!(
            pgmres(&b, &pc, &d, &x0, |_| f64::NAN, 5),
            Err(GmresError::InvalidArgument(_))
        ));
    }

    #[test]
    fn lucky_breakdown_solves_window_exactly() {
        // Identity system under the Euclidean weighting: the first Krylov
        // direction already spans the residual, the subdiagonal entry
        // vanishes exactly, and the window solve is exact.
        let id = nalgebra::DMatrix::identity(5, 5);
        let b = csr_from_dense(&id);
        let d = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let x0 = vec![0.0; 5];
        let s0n = norm2(&d);
        let out = pgmres(&b, &IdentityW, &d, &x0, |_| 1e-12 * s0n, 7).unwrap();
        assert_eq!(out.k_lower, 1);
        assert_eq!(out.lucky_breakdowns, 1);
        assert!(out.history[0] <= 1e-12 * s0n);
        for (xi, di) in out.x.iter().zip(&d) {
            assert!((xi - di).abs() <= 1e-12);
        }
    }

    #[test]
    fn breakdown_with_unreachable_tolerance_hits_the_cap_cleanly() {
        // A 2x2 diagonal system is solved exactly at the second step; with a
        // zero tolerance the solver keeps reseeding from roundoff-level
        // residuals and must fail through the cap, not through a panic or a
        // division by zero.
        let m = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0]));
        let b = csr_from_dense(&m);
        let d = vec![1.0, 1.0];
        let x0 = vec![0.0; 2];
        match pgmres_with_cap(&b, &IdentityW, &d, &x0, |_| 0.0, 5, 50) {
            Err(GmresError::IterationCap(50)) => {}
            Ok(out) => {
                // Terminating is acceptable only by reaching exactly zero.
                assert_eq!(out.history.last().copied(), Some(0.0));
            }
            Err(e) => panic!("unexpected error: {e}"),
        }
    }

    #[test]
    fn contraction_factor_examples() {
        let q: f64 = 0.37;
        let history: Vec<f64> = (0..6).map(|i| q.powi(i)).collect();
        let c = contraction_factors(&history).unwrap();
        assert!(!c.lucky_breakdown);
        for r in &c.ratios {
            assert!((r - q).abs() < 1e-15);
        }
        assert!(contraction_factors(&[1.0]).is_err());
        let c = contraction_factors(&[1.0, 0.0, 0.0]).unwrap();
        assert!(c.lucky_breakdown);
        assert_eq!(c.ratios, vec![0.0, 0.0]);
    }

    #[test]
    fn contraction_below_one_and_p_robust_on_fixed_mesh() {
        // Same mesh hierarchy for p = 1, 2, 3; all consecutive ratios must
        // contract, and the worst-case factor may drift only a little with
        // the polynomial degree.
        let mut spread_lo = f64::INFINITY;
        let mut spread_hi = 0.0f64;
        for p in [1usize, 2, 3] {
            let (b, d, pc) = refined_system(p, Variant::AdditiveSchwarz);
            let s0 = pc.apply(&d).unwrap();
            let s0n = pc.pinner(&s0, &d).unwrap();
            let x0 = vec![0.0; d.len()];
            let out = pgmres(&b, &pc, &d, &x0, |_| 1e-5 * s0n, 50).unwrap();
            let mut full = vec![out.s0_norm];
            full.extend_from_slice(&out.history);
            let c = contraction_factors(&full).unwrap();
            assert!(!c.lucky_breakdown);
            let worst = c.ratios.iter().cloned().fold(0.0f64, f64::max);
            assert!(worst < 1.0, "p={p}: worst ratio {worst}");
            spread_lo = spread_lo.min(worst);
            spread_hi = spread_hi.max(worst);
        }
        eprintln!("worst-ratio band over p: [{spread_lo}, {spread_hi}]");
        assert!(
            spread_hi - spread_lo < 0.15,
            "degree robustness: worst ratios spread {} to {}",
            spread_lo,
            spread_hi
        );
    }
}
