//! Residual a posteriori error estimation.
//!
//! For a discrete function `v` the element indicator is
//!
//! ```text
//! eta(T)^2 = |T|   * || div(K grad v - fvec) - b . grad v - c v + f ||_T^2
//!          + |T|^(1/2) * || [[ (K grad v - fvec) . n ]] ||_(dT cap Omega)^2
//! ```
//!
//! with the normal-flux jump taken over interior edges only. Each interior
//! edge is integrated once and its jump norm charged to both adjacent
//! elements, each weighted with its own `|T|^(1/2)`.

use crate::fespace::basis::element_basis;
use crate::fespace::{barycentric_gradients, FeSpace, PdeData};
use crate::mesh::MarkSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("element index {0} out of range ({1} elements)")]
    InvalidElement(u32, usize),
}

/// Squared element indicators of one estimator evaluation.
#[derive(Debug, Clone)]
pub struct EstimatorData {
    eta_sq: Vec<f64>,
}

impl EstimatorData {
    /// Wraps externally computed squared indicators (used by marking tests
    /// and synthetic drivers).
    pub fn from_squared(eta_sq: Vec<f64>) -> Self {
        Self { eta_sq }
    }

    /// Per-element squared indicators `eta(T)^2`.
    pub fn indicators(&self) -> &[f64] {
        &self.eta_sq
    }

    pub fn num_elements(&self) -> usize {
        self.eta_sq.len()
    }

    /// Global squared estimator `eta^2`.
    pub fn total_squared(&self) -> f64 {
        self.eta_sq.iter().sum()
    }

    /// Global estimator `eta`.
    pub fn total(&self) -> f64 {
        self.total_squared().sqrt()
    }

    /// `( sum_{T in set} eta(T)^2 )^(1/2)`.
    pub fn subset_norm(&self, set: &MarkSet) -> Result<f64, EstimatorError> {
        let mut acc = 0.0;
        for &t in set.indices() {
            let sq = self
                .eta_sq
                .get(t as usize)
                .ok_or(EstimatorError::InvalidElement(t, self.eta_sq.len()))?;
            acc += sq;
        }
        Ok(acc.sqrt())
    }
}

/// Evaluates the estimator for the coefficient vector `v` (one entry per
/// degree of freedom, boundary values zero).
pub fn estimate(
    space: &FeSpace,
    data: &PdeData,
    v: &[f64],
) -> Result<EstimatorData, EstimatorError> {
    if v.len() != space.num_dofs() {
        return Err(EstimatorError::Dimension(format!(
            "coefficient vector has length {}, space has {} degrees of freedom",
            v.len(),
            space.num_dofs()
        )));
    }
    let mut nodal = vec![0.0; space.num_nodes()];
    for (dof, &val) in v.iter().enumerate() {
        nodal[space.dof_to_node(dof as u32) as usize] = val;
    }
    estimate_nodal(space, data, &nodal)
}

/// Evaluates the estimator for values given at every node, including
/// boundary nodes. This is the computational core of [`estimate`] and is
/// useful on its own for functions that do not vanish on the boundary.
pub fn estimate_nodal(
    space: &FeSpace,
    data: &PdeData,
    nodal: &[f64],
) -> Result<EstimatorData, EstimatorError> {
    if nodal.len() != space.num_nodes() {
        return Err(EstimatorError::Dimension(format!(
            "nodal vector has length {}, space has {} nodes",
            nodal.len(),
            space.num_nodes()
        )));
    }
    let mesh = space.mesh();
    let info = space.edge_info();
    let p = space.degree();
    let basis = element_basis(p);
    let n_local = space.n_local();
    let nt = mesh.num_elements();
    let mut eta_sq = vec![0.0; nt];

    // Volume residual, one pass over elements.
    let nq = basis.qb.len();
    let mut nodes = vec![0u32; n_local];
    let mut coeffs = vec![0.0; n_local];
    for t in 0..nt {
        space.element_nodes(t, &mut nodes);
        for (a, &n) in nodes.iter().enumerate() {
            coeffs[a] = nodal[n as usize];
        }
        let coords = mesh.element_coords(t);
        let (g, det) = barycentric_gradients(&coords);
        let area = 0.5 * det;
        let mut acc = 0.0;
        for q in 0..nq {
            let l = basis.qb[q];
            let x = [
                l[0] * coords[0][0] + l[1] * coords[1][0] + l[2] * coords[2][0],
                l[0] * coords[0][1] + l[1] * coords[1][1] + l[2] * coords[2][1],
            ];
            let mut value = 0.0;
            let mut dv = [0.0; 3];
            let mut d2v = [0.0; 6];
            for a in 0..n_local {
                let c = coeffs[a];
                let idx = q * n_local + a;
                value += c * basis.val[idx];
                for i in 0..3 {
                    dv[i] += c * basis.dl[idx][i];
                }
                for i in 0..6 {
                    d2v[i] += c * basis.d2l[idx][i];
                }
            }
            let grad = [
                dv[0] * g[0][0] + dv[1] * g[1][0] + dv[2] * g[2][0],
                dv[0] * g[0][1] + dv[1] * g[1][1] + dv[2] * g[2][1],
            ];
            let hess = physical_hessian(&d2v, &g);
            let k = data.k(t, x);
            let div_k = data.div_k(t, x);
            let b = data.b(t, x);
            let div_flux = k[0][0] * hess[0]
                + (k[0][1] + k[1][0]) * hess[1]
                + k[1][1] * hess[2]
                + div_k[0] * grad[0]
                + div_k[1] * grad[1]
                - data.div_fvec(t, x);
            let r = div_flux - b[0] * grad[0] - b[1] * grad[1] - data.c(t, x) * value
                + data.f(t, x);
            acc += basis.qw[q] * det * r * r;
        }
        eta_sq[t] += area * acc;
    }

    // Normal-flux jumps, one pass over interior edges.
    let nq_e = basis.edge_t.len();
    let mut jump = vec![0.0; nq_e];
    let mut nodes_side = vec![0u32; n_local];
    for e in 0..info.num_edges() {
        let elems = info.elements_of(e);
        if elems.len() != 2 {
            continue;
        }
        let (lo, hi) = info.edge_vertices(e);
        let pa = mesh.vertex(lo as usize);
        let pb = mesh.vertex(hi as usize);
        let tau = [pb[0] - pa[0], pb[1] - pa[1]];
        let len = tau[0].hypot(tau[1]);
        let n = [tau[1] / len, -tau[0] / len];
        jump.iter_mut().for_each(|j| *j = 0.0);
        for (side, &t32) in elems.iter().enumerate() {
            let t = t32 as usize;
            let elem = mesh.element(t);
            let edge_ids = info.element_edge_ids(t);
            let j_loc = edge_ids
                .iter()
                .position(|&id| id as usize == e)
                .expect("incident element must contain its edge");
            // Local edge parameter runs elem[j] -> elem[(j+1)%3]; flip the
            // point index when that disagrees with the global lo -> hi walk.
            let forward = elem[j_loc] == lo;
            space.element_nodes(t, &mut nodes_side);
            let coords = mesh.element_coords(t);
            let (g, _) = barycentric_gradients(&coords);
            let sign = if side == 0 { 1.0 } else { -1.0 };
            for m in 0..nq_e {
                let m_loc = if forward { m } else { nq_e - 1 - m };
                let s = basis.edge_t[m];
                let x = [pa[0] + s * tau[0], pa[1] + s * tau[1]];
                let mut dv = [0.0; 3];
                for (a, &node) in nodes_side.iter().enumerate() {
                    let c = nodal[node as usize];
                    let idx = (j_loc * nq_e + m_loc) * n_local + a;
                    for i in 0..3 {
                        dv[i] += c * basis.edge_dl[idx][i];
                    }
                }
                let grad = [
                    dv[0] * g[0][0] + dv[1] * g[1][0] + dv[2] * g[2][0],
                    dv[0] * g[0][1] + dv[1] * g[1][1] + dv[2] * g[2][1],
                ];
                let k = data.k(t, x);
                let fvec = data.fvec(t, x);
                let flux = [
                    k[0][0] * grad[0] + k[0][1] * grad[1] - fvec[0],
                    k[1][0] * grad[0] + k[1][1] * grad[1] - fvec[1],
                ];
                jump[m] += sign * (flux[0] * n[0] + flux[1] * n[1]);
            }
        }
        let norm_sq: f64 = (0..nq_e).map(|m| basis.edge_w[m] * len * jump[m] * jump[m]).sum();
        for &t32 in elems {
            let t = t32 as usize;
            eta_sq[t] += mesh.element_area(t).sqrt() * norm_sq;
        }
    }
    Ok(EstimatorData { eta_sq })
}

/// Physical second derivatives `(v_xx, v_xy, v_yy)` from formal barycentric
/// second derivatives in the order `(00, 11, 22, 01, 02, 12)`.
fn physical_hessian(d2v: &[f64; 6], g: &[[f64; 2]; 3]) -> [f64; 3] {
    // hess = sum_{i,j} (d^2 v / d lambda_i d lambda_j) grad(lambda_i) grad(lambda_j)^T,
    // with the six stored entries covering each unordered pair once.
    let mut h = [0.0; 3];
    let pairs = [(0, 0, 0), (1, 1, 1), (2, 2, 2), (3, 0, 1), (4, 0, 2), (5, 1, 2)];
    for &(slot, i, j) in &pairs {
        let v = d2v[slot];
        if i == j {
            h[0] += v * g[i][0] * g[i][0];
            h[1] += v * g[i][0] * g[i][1];
            h[2] += v * g[i][1] * g[i][1];
        } else {
            h[0] += 2.0 * v * g[i][0] * g[j][0];
            h[1] += v * (g[i][0] * g[j][1] + g[j][0] * g[i][1]);
            h[2] += 2.0 * v * g[i][1] * g[j][1];
        }
    }
    h
}
