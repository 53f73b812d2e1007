//! Optimal symmetric positive definite preconditioners for the principal part.
//!
//! Two variants share one multilevel [`Hierarchy`]:
//!
//! * **Additive Schwarz** — exact solve on the coarsest lowest-order space,
//!   Jacobi-type diagonal corrections on the changed vertices of every
//!   intermediate lowest-order space, and local patch solves around every
//!   vertex of the finest mesh at full degree.
//! * **Symmetric multigrid** — a symmetrized V-cycle over the same data with
//!   damping `mu = 1/(d+1) = 1/3`: damped patch smoothing on the finest
//!   level, damped diagonal smoothing on the changed vertices of the
//!   intermediate levels, and an exact coarsest solve.
//!
//! Both are applied through [`Preconditioner::apply`]; the preconditioner-
//! weighted residual norm needed by the solver is available through
//! [`Preconditioner::pinner`] without ever forming an inverse.

use crate::fespace::{assemble_a, prolongation, FeSpace, FespaceError, PdeData, BOUNDARY};
use crate::linalg::{axpy, dot, norm2, CsrMatrix, DenseFactor, LinalgError, PackedCholesky};
use crate::mesh::{changed_vertices, MeshError, Triangulation};
use std::sync::Arc;
use thiserror::Error;

/// Smoothing damping factor `1/(d+1)` for `d = 2`.
pub const MU: f64 = 1.0 / 3.0;

/// Tolerance below which a negative weighted inner product is treated as
/// roundoff; anything more negative signals a broken preconditioner.
const PINNER_TOL: f64 = 1e-13;

#[derive(Debug, Error)]
pub enum PrecondError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("hierarchy build failed: {0}")]
    Build(String),
    #[error("preconditioner is not positive definite: {0}")]
    NotSpd(String),
}

impl From<FespaceError> for PrecondError {
    fn from(e: FespaceError) -> Self {
        Self::Build(e.to_string())
    }
}

impl From<LinalgError> for PrecondError {
    fn from(e: LinalgError) -> Self {
        Self::Build(e.to_string())
    }
}

impl From<MeshError> for PrecondError {
    fn from(e: MeshError) -> Self {
        Self::Build(e.to_string())
    }
}

/// Preconditioner variant selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    AdditiveSchwarz,
    SymmetricMultigrid,
    /// Drops everything but the exact coarsest-level solve; only meaningful
    /// for diagnostics and tests of the additive structure.
    CoarseOnly,
    /// `apply` is the identity; turns the weighted solver into plain
    /// unpreconditioned GMRES. Diagnostics and tests only.
    Identity,
}

/// One intermediate lowest-order level of the hierarchy.
struct Q1Level {
    /// Prolongation from the previous level's lowest-order space.
    e: CsrMatrix,
    /// Lowest-order principal-part matrix on this level.
    a_q1: CsrMatrix,
    /// Sparse inverse diagonal of `a_q1`, restricted to degrees of freedom
    /// whose vertex is new or has a changed patch; pairs `(dof, 1/diag)`.
    dplus_inv: Vec<(u32, f64)>,
    n: usize,
}

/// Patch solvers around every vertex of the finest mesh, stored as one flat
/// pool of packed Cholesky factors.
struct PatchSet {
    /// `dof_ids[dof_start[z] .. dof_start[z+1]]` are the sorted global
    /// degrees of freedom interior to the patch of vertex `z`.
    dof_start: Vec<u32>,
    dof_ids: Vec<u32>,
    /// Packed factor of patch `z` at `l_data[l_start[z] .. l_start[z+1]]`.
    l_start: Vec<usize>,
    l_data: Vec<f64>,
    max_dim: usize,
}

impl PatchSet {
    /// `s += sum_z I_z (A_z)^{-1} I_z^T r`, patches visited in vertex order.
    fn apply_add(&self, r: &[f64], s: &mut [f64], scale: f64, scratch: &mut Vec<f64>) {
        scratch.resize(self.max_dim, 0.0);
        for z in 0..self.dof_start.len() - 1 {
            let dofs = &self.dof_ids[self.dof_start[z] as usize..self.dof_start[z + 1] as usize];
            let n = dofs.len();
            if n == 0 {
                continue;
            }
            let l = &self.l_data[self.l_start[z]..self.l_start[z + 1]];
            let b = &mut scratch[..n];
            for (slot, &d) in b.iter_mut().zip(dofs) {
                *slot = r[d as usize];
            }
            PackedCholesky::solve_raw(n, l, b);
            for (&d, &v) in dofs.iter().zip(b.iter()) {
                s[d as usize] += scale * v;
            }
        }
    }

    #[cfg(test)]
    fn num_patches(&self) -> usize {
        self.dof_start.len() - 1
    }

    #[cfg(test)]
    fn dofs_of(&self, z: usize) -> &[u32] {
        &self.dof_ids[self.dof_start[z] as usize..self.dof_start[z + 1] as usize]
    }
}

/// Multilevel data shared by both preconditioner variants.
pub struct Hierarchy {
    p: usize,
    /// Exact factorization of the coarsest lowest-order matrix (`None` for an
    /// empty coarsest space).
    coarse_factor: Option<DenseFactor>,
    /// Intermediate levels in mesh order (index `j` is mesh level `j + 1`).
    q1_levels: Vec<Q1Level>,
    /// Embedding from the finest lowest-order space into the finest space.
    embed: CsrMatrix,
    /// Principal-part matrix on the finest space.
    fine_a: CsrMatrix,
    patches: PatchSet,
    fine_space: Arc<FeSpace>,
    /// Lowest-order space on the finest mesh, kept to extend the hierarchy.
    fine_q1: FeSpace,
}

impl Hierarchy {
    /// Starts a hierarchy on the coarsest level.
    pub fn new(space: Arc<FeSpace>, data: &PdeData) -> Result<Self, PrecondError> {
        let mesh = space.mesh_arc();
        let q1 = FeSpace::new(Arc::clone(&mesh), 1)?;
        let a_q1 = assemble_a(&q1, data)?;
        let coarse_factor = if q1.num_dofs() > 0 {
            Some(DenseFactor::cholesky(a_q1.to_dense())?)
        } else {
            None
        };
        let embed = prolongation(&q1, &space)?;
        let fine_a = assemble_a(&space, data)?;
        let patches = build_patches(&space, &fine_a)?;
        Ok(Self {
            p: space.degree(),
            coarse_factor,
            q1_levels: Vec::new(),
            embed,
            fine_a,
            patches,
            fine_space: space,
            fine_q1: q1,
        })
    }

    /// Appends a refinement as the new finest level. The previous finest mesh
    /// becomes an intermediate level smoothed on its changed vertices only.
    pub fn push_level(&mut self, space: Arc<FeSpace>, data: &PdeData) -> Result<(), PrecondError> {
        if space.degree() != self.p {
            return Err(PrecondError::Build(format!(
                "hierarchy has degree {}, new level has degree {}",
                self.p,
                space.degree()
            )));
        }
        let prev_mesh = self.fine_space.mesh_arc();
        let mesh = space.mesh_arc();
        let v_plus = changed_vertices(&prev_mesh, &mesh)?;
        let q1 = FeSpace::new(Arc::clone(&mesh), 1)?;
        let e = prolongation(&self.fine_q1, &q1)?;
        let a_q1 = assemble_a(&q1, data)?;
        let diag = a_q1.diagonal();
        let mut in_vplus = vec![false; mesh.num_vertices()];
        for &z in &v_plus {
            in_vplus[z as usize] = true;
        }
        let mut dplus_inv = Vec::new();
        for dof in 0..q1.num_dofs() as u32 {
            let vertex = q1.dof_to_node(dof) as usize;
            if in_vplus[vertex] {
                let d = diag[dof as usize];
                if d <= 0.0 {
                    return Err(PrecondError::Build(format!(
                        "nonpositive stiffness diagonal {d} at vertex {vertex}"
                    )));
                }
                dplus_inv.push((dof, 1.0 / d));
            }
        }
        let n = q1.num_dofs();
        self.q1_levels.push(Q1Level {
            e,
            a_q1,
            dplus_inv,
            n,
        });
        self.embed = prolongation(&q1, &space)?;
        self.fine_a = assemble_a(&space, data)?;
        self.patches = build_patches(&space, &self.fine_a)?;
        self.fine_space = space;
        self.fine_q1 = q1;
        Ok(())
    }

    /// Number of mesh levels (coarsest included).
    pub fn num_levels(&self) -> usize {
        self.q1_levels.len() + 1
    }

    pub fn fine_space(&self) -> &Arc<FeSpace> {
        &self.fine_space
    }

    /// Principal-part (energy) matrix on the finest space.
    pub fn fine_matrix(&self) -> &CsrMatrix {
        &self.fine_a
    }

    fn fine_n(&self) -> usize {
        self.fine_space.num_dofs()
    }

    /// Restricts through the lowest-order chain, applies the diagonal and
    /// coarse corrections, prolongs back, and adds the result to `s`.
    fn additive_chain_add(&self, r: &[f64], s: &mut [f64]) {
        let levels = &self.q1_levels;
        // Restricted copies of r on every lowest-order level, finest first.
        let mut g = vec![0.0; self.embed.ncols()];
        self.embed.spmv_transpose(r, &mut g);
        let mut restricted: Vec<Vec<f64>> = Vec::with_capacity(levels.len());
        for level in levels.iter().rev() {
            let mut down = vec![0.0; level.e.ncols()];
            level.e.spmv_transpose(&g, &mut down);
            restricted.push(std::mem::replace(&mut g, down));
        }
        // g now lives on the coarsest level.
        let mut u = match &self.coarse_factor {
            Some(f) => f.solve(&g),
            None => Vec::new(),
        };
        // Ascend, adding the diagonal corrections of intermediate levels.
        // The finest lowest-order level (the last transfer) carries none.
        for (j, level) in levels.iter().enumerate() {
            let mut up = vec![0.0; level.n];
            level.e.spmv(&u, &mut up);
            if j + 1 < levels.len() {
                let r_here = &restricted[levels.len() - 1 - j];
                for &(dof, inv) in &level.dplus_inv {
                    up[dof as usize] += inv * r_here[dof as usize];
                }
            }
            u = up;
        }
        let mut fine = vec![0.0; self.fine_n()];
        self.embed.spmv(&u, &mut fine);
        axpy(1.0, &fine, s);
    }

    /// Symmetrized V-cycle; returns `P r`.
    fn smg_apply(&self, r: &[f64]) -> Vec<f64> {
        let n = self.fine_n();
        let levels = &self.q1_levels;
        let mut scratch = Vec::new();
        // Down sweep, finest first: damped patch smoothing.
        let mut x = vec![0.0; n];
        self.patches.apply_add(r, &mut x, MU, &mut scratch);
        let mut res = vec![0.0; n];
        self.fine_a.spmv(&x, &mut res);
        for (ri, &bi) in res.iter_mut().zip(r) {
            *ri = bi - *ri;
        }
        // Restrict into the lowest-order chain; smooth the intermediate
        // levels on their changed vertices.
        let mut g = vec![0.0; self.embed.ncols()];
        self.embed.spmv_transpose(&res, &mut g);
        // Pass-through: the finest lowest-order level is not smoothed.
        struct DownState {
            g: Vec<f64>,
            x: Vec<f64>,
        }
        let mut states: Vec<Option<DownState>> = Vec::with_capacity(levels.len());
        for (j, level) in levels.iter().enumerate().rev() {
            let smoothed = j + 1 < levels.len();
            if smoothed {
                let mut xl = vec![0.0; level.n];
                for &(dof, inv) in &level.dplus_inv {
                    xl[dof as usize] = MU * inv * g[dof as usize];
                }
                let mut ax = vec![0.0; level.n];
                level.a_q1.spmv(&xl, &mut ax);
                let mut defect = g.clone();
                axpy(-1.0, &ax, &mut defect);
                let mut down = vec![0.0; level.e.ncols()];
                level.e.spmv_transpose(&defect, &mut down);
                states.push(Some(DownState {
                    g: std::mem::replace(&mut g, down),
                    x: xl,
                }));
            } else {
                let mut down = vec![0.0; level.e.ncols()];
                level.e.spmv_transpose(&g, &mut down);
                states.push(None);
                g = down;
            }
        }
        // Exact coarsest solve.
        let mut u = match &self.coarse_factor {
            Some(f) => f.solve(&g),
            None => Vec::new(),
        };
        // Up sweep with post-smoothing on the same levels.
        for (j, level) in levels.iter().enumerate() {
            let state = states[levels.len() - 1 - j].as_ref();
            let mut up = vec![0.0; level.n];
            level.e.spmv(&u, &mut up);
            if let Some(state) = state {
                axpy(1.0, &state.x, &mut up);
                let mut ax = vec![0.0; level.n];
                level.a_q1.spmv(&up, &mut ax);
                for &(dof, inv) in &level.dplus_inv {
                    up[dof as usize] += MU * inv * (state.g[dof as usize] - ax[dof as usize]);
                }
            }
            u = up;
        }
        let mut fine = vec![0.0; n];
        self.embed.spmv(&u, &mut fine);
        axpy(1.0, &fine, &mut x);
        // Post patch smoothing.
        self.fine_a.spmv(&x, &mut res);
        for (ri, &bi) in res.iter_mut().zip(r) {
            *ri = bi - *ri;
        }
        self.patches.apply_add(&res, &mut x, MU, &mut scratch);
        x
    }

    /// Coarse-only action `I (A_0)^{-1} I^T r`.
    fn coarse_only_apply(&self, r: &[f64]) -> Vec<f64> {
        let mut s = vec![0.0; self.fine_n()];
        self.additive_coarse_add(r, &mut s);
        s
    }

    fn additive_coarse_add(&self, r: &[f64], s: &mut [f64]) {
        let levels = &self.q1_levels;
        let mut g = vec![0.0; self.embed.ncols()];
        self.embed.spmv_transpose(r, &mut g);
        for level in levels.iter().rev() {
            let mut down = vec![0.0; level.e.ncols()];
            level.e.spmv_transpose(&g, &mut down);
            g = down;
        }
        let mut u = match &self.coarse_factor {
            Some(f) => f.solve(&g),
            None => Vec::new(),
        };
        for level in levels.iter() {
            let mut up = vec![0.0; level.n];
            level.e.spmv(&u, &mut up);
            u = up;
        }
        let mut fine = vec![0.0; self.fine_n()];
        self.embed.spmv(&u, &mut fine);
        axpy(1.0, &fine, s);
    }
}

/// A variant applied over a [`Hierarchy`].
pub struct Preconditioner {
    variant: Variant,
    hierarchy: Hierarchy,
}

impl Preconditioner {
    pub fn new(variant: Variant, hierarchy: Hierarchy) -> Self {
        Self { variant, hierarchy }
    }

    /// Builds a hierarchy over a nested mesh sequence in one call.
    pub fn build(
        meshes: &[Arc<Triangulation>],
        p: usize,
        data: &PdeData,
        variant: Variant,
    ) -> Result<Self, PrecondError> {
        let first = meshes
            .first()
            .ok_or_else(|| PrecondError::Build("empty mesh sequence".into()))?;
        let space = Arc::new(FeSpace::new(Arc::clone(first), p)?);
        let mut hierarchy = Hierarchy::new(space, data)?;
        for mesh in &meshes[1..] {
            let space = Arc::new(FeSpace::new(Arc::clone(mesh), p)?);
            hierarchy.push_level(space, data)?;
        }
        Ok(Self::new(variant, hierarchy))
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn hierarchy(&self) -> &Hierarchy {
        &self.hierarchy
    }

    pub fn hierarchy_mut(&mut self) -> &mut Hierarchy {
        &mut self.hierarchy
    }

    pub fn into_hierarchy(self) -> Hierarchy {
        self.hierarchy
    }

    /// Extends the underlying hierarchy by one level.
    pub fn push_level(&mut self, space: Arc<FeSpace>, data: &PdeData) -> Result<(), PrecondError> {
        self.hierarchy.push_level(space, data)
    }

    /// `s = P r`.
    pub fn apply(&self, r: &[f64]) -> Result<Vec<f64>, PrecondError> {
        let n = self.hierarchy.fine_n();
        if r.len() != n {
            return Err(PrecondError::Dimension(format!(
                "residual has length {}, finest space has {n} degrees of freedom",
                r.len()
            )));
        }
        Ok(match self.variant {
            Variant::Identity => r.to_vec(),
            Variant::CoarseOnly => self.hierarchy.coarse_only_apply(r),
            Variant::AdditiveSchwarz => {
                let mut s = vec![0.0; n];
                let mut scratch = Vec::new();
                self.hierarchy.patches.apply_add(r, &mut s, 1.0, &mut scratch);
                self.hierarchy.additive_chain_add(r, &mut s);
                s
            }
            Variant::SymmetricMultigrid => self.hierarchy.smg_apply(r),
        })
    }

    /// The preconditioner-weighted residual norm `(s, r)^(1/2)` for
    /// `s = apply(r)`, i.e. the norm of `r` in the inverse-weighted inner
    /// product, computed without forming any inverse.
    pub fn pinner(&self, s: &[f64], r: &[f64]) -> Result<f64, PrecondError> {
        let n = self.hierarchy.fine_n();
        if s.len() != n || r.len() != n {
            return Err(PrecondError::Dimension(format!(
                "pinner input lengths {} and {}, expected {n}",
                s.len(),
                r.len()
            )));
        }
        let ip = dot(s, r);
        let scale = norm2(s) * norm2(r);
        if ip < -PINNER_TOL * scale.max(f64::MIN_POSITIVE) {
            return Err(PrecondError::NotSpd(format!(
                "weighted inner product {ip} is negative beyond roundoff"
            )));
        }
        Ok(ip.max(0.0).sqrt())
    }
}

/// Gathers the patch solvers for every vertex of the finest mesh: the degrees
/// of freedom interior to the vertex patch are the vertex itself (if
/// interior), the interior nodes of its incident interior edges, and the
/// element-interior nodes of its incident elements.
fn build_patches(space: &FeSpace, fine_a: &CsrMatrix) -> Result<PatchSet, PrecondError> {
    let mesh = space.mesh();
    let info = space.edge_info();
    let p = space.degree();
    let nv = mesh.num_vertices();
    let ne = info.num_edges();
    let per_edge = p - 1;
    let n_int = crate::fespace::basis::interior_nodes_per_element(p);

    // Vertex -> incident edges.
    let mut edge_count = vec![0u32; nv + 1];
    for e in 0..ne {
        let (a, b) = info.edge_vertices(e);
        edge_count[a as usize + 1] += 1;
        edge_count[b as usize + 1] += 1;
    }
    for i in 0..nv {
        edge_count[i + 1] += edge_count[i];
    }
    let mut edge_adj = vec![0u32; 2 * ne];
    let mut cursor = edge_count.clone();
    for e in 0..ne {
        let (a, b) = info.edge_vertices(e);
        for v in [a, b] {
            edge_adj[cursor[v as usize] as usize] = e as u32;
            cursor[v as usize] += 1;
        }
    }
    let (elem_off, elem_adj) = mesh.vertex_element_incidence();

    let mut dof_start = Vec::with_capacity(nv + 1);
    let mut dof_ids: Vec<u32> = Vec::new();
    let mut l_start = Vec::with_capacity(nv + 1);
    let mut l_data: Vec<f64> = Vec::new();
    let mut max_dim = 0usize;
    let mut packed: Vec<f64> = Vec::new();
    dof_start.push(0);
    l_start.push(0);
    for z in 0..nv {
        let begin = dof_ids.len();
        let vdof = space.node_to_dof(z as u32);
        if vdof != BOUNDARY {
            dof_ids.push(vdof);
        }
        for &e in &edge_adj[edge_count[z] as usize..edge_count[z + 1] as usize] {
            if info.is_boundary_edge(e as usize) {
                continue;
            }
            for s in 0..per_edge {
                let node = nv + e as usize * per_edge + s;
                dof_ids.push(space.node_to_dof(node as u32));
            }
        }
        for &t in &elem_adj[elem_off[z] as usize..elem_off[z + 1] as usize] {
            for i in 0..n_int {
                let node = nv + per_edge * ne + t as usize * n_int + i;
                dof_ids.push(space.node_to_dof(node as u32));
            }
        }
        dof_ids[begin..].sort_unstable();
        let dofs = &dof_ids[begin..];
        let n = dofs.len();
        max_dim = max_dim.max(n);
        // Extract the symmetric patch submatrix in packed lower storage.
        packed.clear();
        packed.resize(n * (n + 1) / 2, 0.0);
        for (i, &di) in dofs.iter().enumerate() {
            let (cols, vals) = fine_a.row(di as usize);
            let row = i * (i + 1) / 2;
            for (&c, &v) in cols.iter().zip(vals) {
                if let Ok(j) = dofs.binary_search(&c) {
                    if j <= i {
                        packed[row + j] = v;
                    }
                }
            }
        }
        let factor = PackedCholesky::new(n, &packed).map_err(|e| {
            PrecondError::Build(format!("patch at vertex {z} is not SPD: {e}"))
        })?;
        l_data.extend_from_slice(&factor.into_raw());
        dof_start.push(dof_ids.len() as u32);
        l_start.push(l_data.len());
    }
    l_data.shrink_to_fit();
    dof_ids.shrink_to_fit();
    Ok(PatchSet {
        dof_start,
        dof_ids,
        l_start,
        l_data,
        max_dim,
    })
}

/// Estimates the extreme eigenvalues of `P A` via the Lanczos tridiagonal of
/// a long preconditioned conjugate-gradient recurrence on the principal part.
/// Returns `(lambda_min, lambda_max)`.
pub fn condition_estimate(
    precond: &Preconditioner,
    max_steps: usize,
    seed: u64,
) -> Result<(f64, f64), PrecondError> {
    let a = precond.hierarchy().fine_matrix();
    let n = a.nrows();
    if n == 0 {
        return Err(PrecondError::Dimension("empty system".into()));
    }
    // Deterministic pseudo-random right-hand side (splitmix64).
    let mut state = seed.wrapping_add(0x9e3779b97f4a7c15);
    let mut next = move || {
        state = state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^= z >> 31;
        (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    };
    let b: Vec<f64> = (0..n).map(|_| next()).collect();
    let mut x = vec![0.0; n];
    let mut r = b;
    let mut z = precond.apply(&r)?;
    let mut rz = dot(&r, &z);
    if rz <= 0.0 {
        return Err(PrecondError::NotSpd("initial weighted residual".into()));
    }
    let mut p_dir = z.clone();
    let mut alphas = Vec::new();
    let mut betas = Vec::new();
    let mut ap = vec![0.0; n];
    let rz0 = rz;
    for _ in 0..max_steps {
        a.spmv(&p_dir, &mut ap);
        let pap = dot(&p_dir, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        axpy(alpha, &p_dir, &mut x);
        axpy(-alpha, &ap, &mut r);
        z = precond.apply(&r)?;
        let rz_new = dot(&r, &z);
        alphas.push(alpha);
        if rz_new <= rz0 * 1e-28 || rz_new <= 0.0 {
            break;
        }
        let beta = rz_new / rz;
        betas.push(beta);
        for (pi, &zi) in p_dir.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
        rz = rz_new;
    }
    let k = alphas.len();
    if k == 0 {
        return Err(PrecondError::NotSpd("conjugate gradients broke down".into()));
    }
    // Lanczos tridiagonal from the recurrence coefficients.
    let mut t = nalgebra::DMatrix::zeros(k, k);
    for i in 0..k {
        let mut d = 1.0 / alphas[i];
        if i > 0 {
            d += betas[i - 1] / alphas[i - 1];
        }
        t[(i, i)] = d;
        if i + 1 < k {
            let off = betas[i].sqrt() / alphas[i];
            t[(i, i + 1)] = off;
            t[(i + 1, i)] = off;
        }
    }
    let eig = t.symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for &lambda in eig.eigenvalues.iter() {
        lo = lo.min(lambda);
        hi = hi.max(lambda);
    }
    Ok((lo, hi))
}
