//! Adaptive solve–estimate–mark–refine driver.
//!
//! The driver couples the preconditioned solver with the a posteriori
//! estimator: on every level the linear system is solved only until the
//! algebraic error indicator drops below `λ_alg · η`, the combined quantity
//! `H = η + ‖s‖` steers both the stopping test and the safeguard that
//! re-balances `C_alg` and `λ_alg`, and Dörfler marking plus newest-vertex
//! bisection produce the next level.  Every solver iterate of every level is
//! recorded, which makes the cumulative-cost and rate diagnostics exact
//! folds over the run history.

use std::sync::Arc;
use std::time::Instant;

use thiserror::Error;

use crate::estimator::{estimate, EstimatorData, EstimatorError};
use crate::fespace::{assemble_b, assemble_rhs, prolongation, FeSpace, FespaceError, PdeData};
use crate::gmres::{pgmres, restart_index, window_step, GmresError};
use crate::mesh::{MarkSet, MeshError, Triangulation};
use crate::precond::{Hierarchy, Preconditioner, PrecondError, Variant};

/// Upper bound for the dyadic value bins used by the relaxed marker.
const MAX_BINS: usize = 64;

#[derive(Debug, Error)]
pub enum AdaptiveError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("inconsistent run history: {0}")]
    History(String),
    #[error("level callback failed: {0}")]
    Callback(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Fespace(#[from] FespaceError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Precond(#[from] PrecondError),
    #[error(transparent)]
    Gmres(#[from] GmresError),
}

/// Parameters of the adaptive driver.
#[derive(Debug, Clone)]
pub struct AdaptiveParams {
    /// Dörfler bulk parameter `θ ∈ (0, 1]`.
    pub theta: f64,
    /// Marking quality: `1` requests an exact smallest set, values `≥ 2`
    /// allow the linear-time binned selector with its factor-two guarantee.
    pub c_mark: f64,
    /// Initial safeguard constant `C_alg > 0`.
    pub c_alg: f64,
    /// Initial solver-tolerance factor `λ_alg > 0`.
    pub lambda_alg: f64,
    /// Restart window length of the solver.
    pub k_max: usize,
    /// Target accuracy for `H = η + ‖s‖`; the run stops once `H ≤ τ`.
    pub tau: f64,
    /// Polynomial degree of the trial space.
    pub p: usize,
    /// Degree-of-freedom budget; a level whose space exceeds it is recorded
    /// but not solved.
    pub max_dof: usize,
    /// Optional hard cap on the number of refinement levels.
    pub max_level: Option<usize>,
    /// Preconditioner flavour used as the inner product and weighting.
    pub variant: Variant,
}

impl Default for AdaptiveParams {
    fn default() -> Self {
        Self {
            theta: 0.5,
            c_mark: 1.0,
            c_alg: 1.0,
            lambda_alg: 1.0,
            k_max: 5,
            tau: 0.0,
            p: 2,
            max_dof: 100_000,
            max_level: None,
            variant: Variant::AdditiveSchwarz,
        }
    }
}

impl AdaptiveParams {
    pub fn validate(&self) -> Result<(), AdaptiveError> {
        let fail = |msg: String| Err(AdaptiveError::InvalidParameter(msg));
        if !self.theta.is_finite() || self.theta <= 0.0 || self.theta > 1.0 {
            return fail(format!("theta = {} is outside (0, 1]", self.theta));
        }
        if !self.c_mark.is_finite() || self.c_mark < 1.0 {
            return fail(format!("c_mark = {} must be at least 1", self.c_mark));
        }
        if !self.c_alg.is_finite() || self.c_alg <= 0.0 {
            return fail(format!("c_alg = {} must be positive", self.c_alg));
        }
        if !self.lambda_alg.is_finite() || self.lambda_alg <= 0.0 {
            return fail(format!("lambda_alg = {} must be positive", self.lambda_alg));
        }
        if self.k_max == 0 {
            return fail("k_max must be at least 1".into());
        }
        if !self.tau.is_finite() || self.tau < 0.0 {
            return fail(format!("tau = {} must be finite and non-negative", self.tau));
        }
        if !(1..=crate::fespace::basis::MAX_DEGREE).contains(&self.p) {
            return fail(format!(
                "degree p = {} is outside 1..={}",
                self.p,
                crate::fespace::basis::MAX_DEGREE
            ));
        }
        Ok(())
    }
}

/// Why a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    /// `H ≤ τ` on the final level.
    TauReached,
    /// `H = 0` exactly: data resolved to machine zero.
    Exact,
    /// Degree-of-freedom or level budget exhausted.
    Budget,
}

/// One solver iterate (or the initial iterate `k = 0`) of one level.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub ell: usize,
    /// Global iteration counter on this level; `0` is the nested initial guess.
    pub k: usize,
    /// Position inside the restart window (`0` for the initial iterate).
    pub window_step: usize,
    /// Number of completed restart windows (`0` for the initial iterate).
    pub restart_index: usize,
    pub n_elem: usize,
    pub n_dof: usize,
    /// Estimator value `η_ℓ(u^k)`.
    pub eta: f64,
    /// Preconditioned residual norm `‖s^k‖`.
    pub res_norm: f64,
    /// `H = η + ‖s‖`, the quantity driving all stopping decisions.
    pub h: f64,
    /// Cumulative cost: sum of `n_elem` over all records up to this one.
    pub cost: u64,
    /// Safeguard constant in effect while this level was solved.
    pub c_alg: f64,
    /// Tolerance factor in effect while this level was solved.
    pub lambda_alg: f64,
    /// Wall time attributed to this record, in milliseconds.
    pub wall_ms: f64,
}

/// Complete record of an adaptive run.
#[derive(Debug, Clone)]
pub struct RunHistory {
    pub records: Vec<StepRecord>,
    pub status: RunStatus,
    /// How often the safeguard re-balanced `C_alg` and `λ_alg`.
    pub triggers: usize,
    pub final_c_alg: f64,
    pub final_lambda_alg: f64,
    /// Coefficients of the last recorded iterate, in the final level's space.
    pub final_x: Vec<f64>,
}

impl RunHistory {
    /// Index of the last record of every level, in level order.  When the
    /// run ended because a level exceeded the budget before it was solved,
    /// that trailing unsolved level is excluded.
    pub fn level_final_indices(&self) -> Vec<usize> {
        let mut finals: Vec<usize> = Vec::new();
        for (i, rec) in self.records.iter().enumerate() {
            match finals.last() {
                Some(&j) if self.records[j].ell == rec.ell => *finals.last_mut().unwrap() = i,
                _ => finals.push(i),
            }
        }
        if self.status == RunStatus::Budget {
            if let Some(&j) = finals.last() {
                if self.records[j].k == 0 && self.records[j].ell > 0 {
                    finals.pop();
                }
            }
        }
        finals
    }
}

/// Safeguard update for the pair `(C_alg, λ_alg)`.
///
/// `s_sum` carries the running sum of `1/H` over the previous levels.  On a
/// level `ell ≥ 1` whose accumulated sum already exceeds `C_alg / h`, the
/// safeguard doubles `C_alg` and halves `λ_alg`; afterwards `1/h` is added
/// to the sum unconditionally.  Returns the new `(s_sum, c_alg, lambda_alg)`
/// and whether the safeguard fired.
pub fn parameter_control(
    s_sum: f64,
    c_alg: f64,
    lambda_alg: f64,
    ell: usize,
    h: f64,
) -> Result<(f64, f64, f64, bool), AdaptiveError> {
    if !h.is_finite() || h <= 0.0 {
        return Err(AdaptiveError::InvalidParameter(format!(
            "parameter control requires H > 0, got {h}"
        )));
    }
    if !s_sum.is_finite() || s_sum < 0.0 || !c_alg.is_finite() || c_alg <= 0.0 {
        return Err(AdaptiveError::InvalidParameter(
            "parameter control requires a finite non-negative sum and C_alg > 0".into(),
        ));
    }
    let mut c = c_alg;
    let mut lambda = lambda_alg;
    let mut triggered = false;
    if ell >= 1 && s_sum > c / h {
        c *= 2.0;
        lambda /= 2.0;
        triggered = true;
    }
    Ok((s_sum + 1.0 / h, c, lambda, triggered))
}

/// Adjusted bulk parameter `(√θ + r)² / (1 − r)²` for a perturbation ratio
/// `r ∈ [0, 1)`; it quantifies how marking on an inexact iterate inflates
/// the effective Dörfler parameter.
pub fn theta_mark(theta: f64, ratio: f64) -> Result<f64, AdaptiveError> {
    if !theta.is_finite() || !(0.0..=1.0).contains(&theta) {
        return Err(AdaptiveError::InvalidParameter(format!(
            "theta = {theta} is outside [0, 1]"
        )));
    }
    if !ratio.is_finite() || !(0.0..1.0).contains(&ratio) {
        return Err(AdaptiveError::InvalidParameter(format!(
            "perturbation ratio = {ratio} is outside [0, 1)"
        )));
    }
    Ok(((theta.sqrt() + ratio) / (1.0 - ratio)).powi(2))
}

fn desc_value_asc_index(a: &(f64, u32), b: &(f64, u32)) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Appends the indices of a smallest set whose values sum to at least
/// `target`, taking elements in descending value order (ties by index).
/// Average linear time through repeated median partitioning.
fn minimal_prefix(entries: &mut [(f64, u32)], target: f64, out: &mut Vec<u32>) {
    if target <= 0.0 || entries.is_empty() {
        return;
    }
    if entries.len() <= 32 {
        entries.sort_unstable_by(desc_value_asc_index);
        let mut remaining = target;
        for &(value, index) in entries.iter() {
            out.push(index);
            remaining -= value;
            if remaining <= 0.0 {
                return;
            }
        }
        return;
    }
    let mid = entries.len() / 2;
    entries.select_nth_unstable_by(mid, desc_value_asc_index);
    let upper_sum: f64 = entries[..mid].iter().map(|e| e.0).sum();
    if upper_sum >= target {
        minimal_prefix(&mut entries[..mid], target, out);
    } else {
        out.extend(entries[..mid].iter().map(|e| e.1));
        minimal_prefix(&mut entries[mid..], target - upper_sum, out);
    }
}

/// Appends a set with `value_sum ≥ target` whose cardinality is at most
/// twice the minimum, by consuming dyadic value bins from large to small.
fn binned_prefix(eta_sq: &[f64], target: f64, out: &mut Vec<u32>) {
    let max_value = eta_sq.iter().cloned().fold(0.0_f64, f64::max);
    if max_value <= 0.0 {
        return;
    }
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); MAX_BINS];
    for (t, &value) in eta_sq.iter().enumerate() {
        if value > 0.0 {
            let bin = ((max_value / value).log2().floor() as i64).clamp(0, MAX_BINS as i64 - 1);
            bins[bin as usize].push(t as u32);
        }
    }
    let mut acc = 0.0;
    for bin in &bins {
        for &t in bin {
            out.push(t);
            acc += eta_sq[t as usize];
            if acc >= target {
                return;
            }
        }
    }
}

/// Dörfler marking: returns a set `M` with `θ · η² ≤ η(M)²`.
///
/// With `c_mark < 2` the set has exactly minimal cardinality; for
/// `c_mark ≥ 2` a linear-time dyadic-binning selector is used whose
/// cardinality is at most twice minimal.  Elements with zero indicator are
/// never marked, and a zero total yields the empty set.
pub fn dorfler_mark(
    data: &EstimatorData,
    theta: f64,
    c_mark: f64,
) -> Result<MarkSet, AdaptiveError> {
    if !theta.is_finite() || !(0.0..=1.0).contains(&theta) {
        return Err(AdaptiveError::InvalidParameter(format!(
            "theta = {theta} is outside [0, 1]"
        )));
    }
    if !c_mark.is_finite() || c_mark < 1.0 {
        return Err(AdaptiveError::InvalidParameter(format!(
            "c_mark = {c_mark} must be at least 1"
        )));
    }
    let eta_sq = data.indicators();
    let total = data.total_squared();
    if total <= 0.0 {
        return Ok(MarkSet::empty());
    }
    let mut out: Vec<u32> = Vec::new();
    if theta == 1.0 {
        out.extend(
            eta_sq
                .iter()
                .enumerate()
                .filter(|(_, &v)| v > 0.0)
                .map(|(t, _)| t as u32),
        );
        return Ok(MarkSet::new(out));
    }
    let target = theta * total;
    if c_mark < 2.0 {
        let mut entries: Vec<(f64, u32)> = eta_sq
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(|(t, &v)| (v, t as u32))
            .collect();
        minimal_prefix(&mut entries, target, &mut out);
    } else {
        binned_prefix(eta_sq, target, &mut out);
    }
    Ok(MarkSet::new(out))
}

/// Running cumulative cost of a record sequence: entry `i` is the sum of
/// `n_elem` over records `0..=i`.
pub fn cumulative_cost(records: &[StepRecord]) -> Vec<u64> {
    let mut acc = 0u64;
    records
        .iter()
        .map(|rec| {
            acc += rec.n_elem as u64;
            acc
        })
        .collect()
}

/// Rate and complexity diagnostics of a run.
#[derive(Debug, Clone)]
pub struct RateDiagnostics {
    /// `sup (#T)^s · H` over all records.
    pub m_elem: f64,
    /// `sup cost^s · H` over all records.
    pub m_cost: f64,
    /// Log-log slope of `H` against degrees of freedom over the final decade.
    pub slope_dof: f64,
    /// Log-log slope of `H` against cumulative cost over the final decade.
    pub slope_cost: f64,
    /// Log-log slope of `H` against cumulative wall time over the final decade.
    pub slope_wall: f64,
}

fn lsq_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        var += (x - mx) * (x - mx);
    }
    cov / var
}

/// Computes `M(s)` suprema over all records and the three log-log
/// convergence slopes from the per-level final records whose degree-of-
/// freedom count lies in the final decade `[N_max/10, N_max]`.  A trailing
/// level that was recorded but never solved is excluded from the fits.
pub fn rate_diagnostics(history: &RunHistory, s: f64) -> Result<RateDiagnostics, AdaptiveError> {
    if !s.is_finite() || s <= 0.0 {
        return Err(AdaptiveError::InvalidParameter(format!(
            "rate exponent s = {s} must be positive"
        )));
    }
    if history.records.is_empty() {
        return Err(AdaptiveError::History("empty run history".into()));
    }
    let mut m_elem = 0.0_f64;
    let mut m_cost = 0.0_f64;
    for rec in &history.records {
        m_elem = m_elem.max((rec.n_elem as f64).powf(s) * rec.h);
        m_cost = m_cost.max((rec.cost as f64).powf(s) * rec.h);
    }

    let mut cum_wall = 0.0;
    let mut wall_at: Vec<f64> = Vec::with_capacity(history.records.len());
    for rec in &history.records {
        cum_wall += rec.wall_ms;
        wall_at.push(cum_wall);
    }

    let finals = history.level_final_indices();
    let positive: Vec<usize> = finals
        .into_iter()
        .filter(|&i| history.records[i].h > 0.0)
        .collect();
    let n_max = positive
        .iter()
        .map(|&i| history.records[i].n_dof)
        .max()
        .unwrap_or(0);
    let decade: Vec<usize> = positive
        .iter()
        .copied()
        .filter(|&i| 10 * history.records[i].n_dof >= n_max)
        .collect();
    if decade.len() < 2 {
        return Err(AdaptiveError::History(
            "need at least two solved levels in the final decade for a rate fit".into(),
        ));
    }
    let log_h: Vec<f64> = decade.iter().map(|&i| history.records[i].h.ln()).collect();
    let log_dof: Vec<f64> = decade
        .iter()
        .map(|&i| (history.records[i].n_dof as f64).ln())
        .collect();
    let log_cost: Vec<f64> = decade
        .iter()
        .map(|&i| (history.records[i].cost as f64).ln())
        .collect();
    // Clock granularity can report a zero wall time for very fast levels;
    // clamp so the logarithm stays finite.
    let log_wall: Vec<f64> = decade
        .iter()
        .map(|&i| wall_at[i].max(1e-6).ln())
        .collect();
    Ok(RateDiagnostics {
        m_elem,
        m_cost,
        slope_dof: lsq_slope(&log_dof, &log_h),
        slope_cost: lsq_slope(&log_cost, &log_h),
        slope_wall: lsq_slope(&log_wall, &log_h),
    })
}

/// Runs the adaptive loop starting from `mesh0`.
pub fn afem_run(
    mesh0: Arc<Triangulation>,
    data: &PdeData,
    params: &AdaptiveParams,
) -> Result<RunHistory, AdaptiveError> {
    afem_run_with(mesh0, data, params, |_, _| Ok(()))
}

/// [`afem_run`] with a callback invoked once per level (before assembly)
/// with the level index and its mesh; used to snapshot the hierarchy. A
/// callback error aborts the run.
pub fn afem_run_with(
    mesh0: Arc<Triangulation>,
    data: &PdeData,
    params: &AdaptiveParams,
    mut on_level: impl FnMut(usize, &Triangulation) -> Result<(), AdaptiveError>,
) -> Result<RunHistory, AdaptiveError> {
    params.validate()?;

    let mut records: Vec<StepRecord> = Vec::new();
    let mut cum_cost = 0u64;
    let mut s_sum = 0.0_f64;
    let mut c_alg = params.c_alg;
    let mut lambda_alg = params.lambda_alg;
    let mut triggers = 0usize;

    let mut mesh = mesh0;
    let mut space = Arc::new(FeSpace::new(Arc::clone(&mesh), params.p)?);
    let mut precond = Preconditioner::new(
        params.variant,
        Hierarchy::new(Arc::clone(&space), data)?,
    );
    let mut x0: Vec<f64> = vec![0.0; space.num_dofs()];
    let mut ell = 0usize;

    let finish = |records: Vec<StepRecord>, status, triggers, c_alg, lambda_alg, x: Vec<f64>| {
        Ok(RunHistory {
            records,
            status,
            triggers,
            final_c_alg: c_alg,
            final_lambda_alg: lambda_alg,
            final_x: x,
        })
    };

    loop {
        on_level(ell, mesh.as_ref())?;
        let level_start = Instant::now();
        let b_mat = assemble_b(&space, data)?;
        let d = assemble_rhs(&space, data)?;
        let n_elem = mesh.num_elements();
        let n_dof = space.num_dofs();

        if n_dof > params.max_dof {
            // Budget exhausted before this level could be solved: record the
            // nested initial iterate so the history still covers the level.
            let eta = estimate(&space, data, &x0)?.total();
            let mut residual = vec![0.0; n_dof];
            b_mat.spmv(&x0, &mut residual);
            for (r, &rhs) in residual.iter_mut().zip(&d) {
                *r = rhs - *r;
            }
            let s_vec = precond.apply(&residual)?;
            let res_norm = precond.pinner(&s_vec, &residual)?;
            cum_cost += n_elem as u64;
            records.push(StepRecord {
                ell,
                k: 0,
                window_step: 0,
                restart_index: 0,
                n_elem,
                n_dof,
                eta,
                res_norm,
                h: eta + res_norm,
                cost: cum_cost,
                c_alg,
                lambda_alg,
                wall_ms: level_start.elapsed().as_secs_f64() * 1e3,
            });
            return finish(records, RunStatus::Budget, triggers, c_alg, lambda_alg, x0);
        }

        // Solve until ‖s‖ ≤ λ_alg · η, recording η and wall time of every
        // iterate through the tolerance callback (invoked exactly once per
        // iterate, in order, starting with the initial guess).
        let mut etas: Vec<f64> = Vec::new();
        let mut walls: Vec<f64> = Vec::new();
        let mut last_instant = level_start;
        let lambda_now = lambda_alg;
        let outcome = {
            let space_ref: &FeSpace = &space;
            pgmres(
                &b_mat,
                &precond,
                &d,
                &x0,
                |x| {
                    let eta = estimate(space_ref, data, x)
                        .expect("estimator input sizes are fixed by the enclosing level")
                        .total();
                    etas.push(eta);
                    let now = Instant::now();
                    walls.push(now.duration_since(last_instant).as_secs_f64() * 1e3);
                    last_instant = now;
                    lambda_now * eta
                },
                params.k_max,
            )?
        };
        if etas.len() != outcome.k_lower + 1 {
            return Err(AdaptiveError::History(format!(
                "expected {} tolerance evaluations, observed {}",
                outcome.k_lower + 1,
                etas.len()
            )));
        }

        for k in 0..=outcome.k_lower {
            let res_norm = if k == 0 {
                outcome.s0_norm
            } else {
                outcome.history[k - 1]
            };
            let (kw, ri) = if k == 0 {
                (0, 0)
            } else {
                (window_step(k, params.k_max), restart_index(k, params.k_max))
            };
            cum_cost += n_elem as u64;
            records.push(StepRecord {
                ell,
                k,
                window_step: kw,
                restart_index: ri,
                n_elem,
                n_dof,
                eta: etas[k],
                res_norm,
                h: etas[k] + res_norm,
                cost: cum_cost,
                c_alg,
                lambda_alg,
                wall_ms: walls[k],
            });
        }
        let x = outcome.x;
        let h_final = records.last().expect("at least one record per level").h;

        if h_final == 0.0 {
            return finish(records, RunStatus::Exact, triggers, c_alg, lambda_alg, x);
        }
        if h_final <= params.tau {
            return finish(records, RunStatus::TauReached, triggers, c_alg, lambda_alg, x);
        }
        if params.max_level.is_some_and(|cap| ell >= cap) {
            return finish(records, RunStatus::Budget, triggers, c_alg, lambda_alg, x);
        }

        let (s_new, c_new, lambda_new, fired) =
            parameter_control(s_sum, c_alg, lambda_alg, ell, h_final)?;
        s_sum = s_new;
        c_alg = c_new;
        lambda_alg = lambda_new;
        triggers += usize::from(fired);

        let est = estimate(&space, data, &x)?;
        let marks = dorfler_mark(&est, params.theta, params.c_mark)?;
        if marks.is_empty() {
            // `H > 0` with an empty mark set would loop forever; it can only
            // happen if the estimator total vanished while the residual did
            // not, which the exact-termination branch above already excludes.
            return Err(AdaptiveError::History(
                "marking selected no elements although H > 0".into(),
            ));
        }

        let fine_mesh = Arc::new(mesh.refine(&marks)?);
        let fine_space = Arc::new(FeSpace::new(Arc::clone(&fine_mesh), params.p)?);
        let embed = prolongation(&space, &fine_space)?;
        let mut x_next = vec![0.0; fine_space.num_dofs()];
        embed.spmv(&x, &mut x_next);
        precond.push_level(Arc::clone(&fine_space), data)?;

        mesh = fine_mesh;
        space = fine_space;
        x0 = x_next;
        ell += 1;
    }
}
