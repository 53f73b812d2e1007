//! Galerkin assembly of the bilinear form, its symmetric principal part, and
//! the load vector.
//!
//! [`ElementKernels`] produces dense per-element matrices; the global
//! assemblers scatter them into CSR via the two-pass builder so no global
//! triplet list is ever materialised. All loops run in deterministic element
//! order.

use super::basis::{element_basis, ElementBasis};
use super::{barycentric_gradients, FeSpace, FespaceError, PdeData, BOUNDARY};
use crate::linalg::{CsrBuilder, CsrMatrix};

/// Per-element integration kernels for a space and coefficient data.
pub struct ElementKernels<'a> {
    space: &'a FeSpace,
    data: &'a PdeData,
    basis: &'static ElementBasis,
}

impl<'a> ElementKernels<'a> {
    pub fn new(space: &'a FeSpace, data: &'a PdeData) -> Self {
        Self {
            space,
            data,
            basis: element_basis(space.degree()),
        }
    }

    pub fn n_local(&self) -> usize {
        self.basis.n_local
    }

    /// Dense element matrix of the full bilinear form
    /// `(K ∇u, ∇v) + (b · ∇u + c u, v)` on element `t`; `out` is row-major
    /// with rows indexing the test function. `out` must hold `n_local²`.
    pub fn element_matrix_full(&self, t: usize, out: &mut [f64]) -> Result<(), FespaceError> {
        self.element_matrix(t, out, true)
    }

    /// Dense element matrix of the principal part `(K ∇u, ∇v)` alone.
    pub fn element_matrix_stiffness(&self, t: usize, out: &mut [f64]) -> Result<(), FespaceError> {
        self.element_matrix(t, out, false)
    }

    fn element_matrix(
        &self,
        t: usize,
        out: &mut [f64],
        full: bool,
    ) -> Result<(), FespaceError> {
        let n = self.basis.n_local;
        assert_eq!(out.len(), n * n);
        out.fill(0.0);
        let coords = self.space.mesh().element_coords(t);
        let (gl, det) = barycentric_gradients(&coords);
        if det <= 0.0 {
            return Err(FespaceError::DegenerateElement(t));
        }
        let mut grads = vec![[0.0f64; 2]; n];
        let mut kgrads = vec![[0.0f64; 2]; n];
        for (q, lambda) in self.basis.qb.iter().enumerate() {
            let x = [
                lambda[0] * coords[0][0] + lambda[1] * coords[1][0] + lambda[2] * coords[2][0],
                lambda[0] * coords[0][1] + lambda[1] * coords[1][1] + lambda[2] * coords[2][1],
            ];
            self.data.check_k_at(t, x)?;
            let k = self.data.k(t, x);
            let w = self.basis.qw[q] * det;
            let off = q * n;
            for a in 0..n {
                let d = self.basis.dl[off + a];
                let g = [
                    d[0] * gl[0][0] + d[1] * gl[1][0] + d[2] * gl[2][0],
                    d[0] * gl[0][1] + d[1] * gl[1][1] + d[2] * gl[2][1],
                ];
                grads[a] = g;
                kgrads[a] = [
                    k[0][0] * g[0] + k[0][1] * g[1],
                    k[1][0] * g[0] + k[1][1] * g[1],
                ];
            }
            if full {
                let b = self.data.b(t, x);
                let c = self.data.c(t, x);
                for a in 0..n {
                    let va = self.basis.val[off + a];
                    let ga = grads[a];
                    let row = &mut out[a * n..(a + 1) * n];
                    for bb in 0..n {
                        let diff = kgrads[bb][0] * ga[0] + kgrads[bb][1] * ga[1];
                        let conv = (b[0] * grads[bb][0] + b[1] * grads[bb][1]) * va;
                        let reac = c * self.basis.val[off + bb] * va;
                        row[bb] += w * (diff + conv + reac);
                    }
                }
            } else {
                for a in 0..n {
                    let ga = grads[a];
                    let row = &mut out[a * n..(a + 1) * n];
                    for bb in 0..n {
                        row[bb] += w * (kgrads[bb][0] * ga[0] + kgrads[bb][1] * ga[1]);
                    }
                }
            }
        }
        Ok(())
    }

    /// Dense element load vector `F(φ_a) = (f, φ_a) + (fvec, ∇φ_a)`.
    pub fn element_rhs(&self, t: usize, out: &mut [f64]) -> Result<(), FespaceError> {
        let n = self.basis.n_local;
        assert_eq!(out.len(), n);
        out.fill(0.0);
        let coords = self.space.mesh().element_coords(t);
        let (gl, det) = barycentric_gradients(&coords);
        if det <= 0.0 {
            return Err(FespaceError::DegenerateElement(t));
        }
        for (q, lambda) in self.basis.qb.iter().enumerate() {
            let x = [
                lambda[0] * coords[0][0] + lambda[1] * coords[1][0] + lambda[2] * coords[2][0],
                lambda[0] * coords[0][1] + lambda[1] * coords[1][1] + lambda[2] * coords[2][1],
            ];
            let f = self.data.f(t, x);
            let fv = self.data.fvec(t, x);
            let w = self.basis.qw[q] * det;
            let off = q * n;
            for a in 0..n {
                let d = self.basis.dl[off + a];
                let g = [
                    d[0] * gl[0][0] + d[1] * gl[1][0] + d[2] * gl[2][0],
                    d[0] * gl[0][1] + d[1] * gl[1][1] + d[2] * gl[2][1],
                ];
                out[a] += w * (f * self.basis.val[off + a] + fv[0] * g[0] + fv[1] * g[1]);
            }
        }
        Ok(())
    }
}

fn assemble_matrix(
    space: &FeSpace,
    data: &PdeData,
    full: bool,
) -> Result<CsrMatrix, FespaceError> {
    let kernels = ElementKernels::new(space, data);
    let n = space.num_dofs();
    let n_local = kernels.n_local();
    let nt = space.mesh().num_elements();
    let mut nodes = vec![0u32; n_local];
    let mut dofs = vec![0u32; n_local];

    let mut builder = CsrBuilder::new(n, n);
    for t in 0..nt {
        space.element_nodes(t, &mut nodes);
        let mut count = 0usize;
        for (slot, &node) in dofs.iter_mut().zip(nodes.iter()) {
            *slot = space.node_to_dof(node);
            if *slot != BOUNDARY {
                count += 1;
            }
        }
        for &d in dofs.iter() {
            if d != BOUNDARY {
                builder.count(d as usize, count);
            }
        }
    }
    builder.begin_fill();
    let mut m = vec![0.0f64; n_local * n_local];
    for t in 0..nt {
        if full {
            kernels.element_matrix_full(t, &mut m)?;
        } else {
            kernels.element_matrix_stiffness(t, &mut m)?;
        }
        space.element_nodes(t, &mut nodes);
        for (slot, &node) in dofs.iter_mut().zip(nodes.iter()) {
            *slot = space.node_to_dof(node);
        }
        for a in 0..n_local {
            let ra = dofs[a];
            if ra == BOUNDARY {
                continue;
            }
            for b in 0..n_local {
                let cb = dofs[b];
                if cb != BOUNDARY {
                    builder.push(ra as usize, cb as usize, m[a * n_local + b]);
                }
            }
        }
    }
    Ok(builder.finish())
}

/// Assembles the Galerkin matrix of the full bilinear form: entry `(j, k)` is
/// the form applied to trial function `k` and test function `j`.
pub fn assemble_b(space: &FeSpace, data: &PdeData) -> Result<CsrMatrix, FespaceError> {
    assemble_matrix(space, data, true)
}

/// Assembles the symmetric positive definite matrix of the principal part
/// `(K ∇u, ∇v)` — the energy inner product.
pub fn assemble_a(space: &FeSpace, data: &PdeData) -> Result<CsrMatrix, FespaceError> {
    assemble_matrix(space, data, false)
}

/// Assembles the load vector `d_j = (f, φ_j) + (fvec, ∇φ_j)`.
pub fn assemble_rhs(space: &FeSpace, data: &PdeData) -> Result<Vec<f64>, FespaceError> {
    let kernels = ElementKernels::new(space, data);
    let n_local = kernels.n_local();
    let mut nodes = vec![0u32; n_local];
    let mut local = vec![0.0f64; n_local];
    let mut rhs = vec![0.0f64; space.num_dofs()];
    for t in 0..space.mesh().num_elements() {
        kernels.element_rhs(t, &mut local)?;
        space.element_nodes(t, &mut nodes);
        for (a, &node) in nodes.iter().enumerate() {
            let dof = space.node_to_dof(node);
            if dof != BOUNDARY {
                rhs[dof as usize] += local[a];
            }
        }
    }
    Ok(rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fespace::basis::gauss_legendre_01;
    use crate::mesh::Triangulation;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn lshape_space(p: usize) -> FeSpace {
        FeSpace::new(Arc::new(Triangulation::lshape()), p).unwrap()
    }

    #[test]
    fn p1_reference_local_stiffness() {
        let mesh = Triangulation::from_parts(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let space = FeSpace::new(Arc::new(mesh), 1).unwrap();
        let data = PdeData::poisson(0.0);
        let kernels = ElementKernels::new(&space, &data);
        let mut m = vec![0.0; 9];
        kernels.element_matrix_stiffness(0, &mut m).unwrap();
        let expect = [
            [1.0, -0.5, -0.5],
            [-0.5, 0.5, 0.0],
            [-0.5, 0.0, 0.5],
        ];
        for a in 0..3 {
            for b in 0..3 {
                assert!(
                    (m[a * 3 + b] - expect[a][b]).abs() < 1e-14,
                    "entry ({a}, {b}): {}",
                    m[a * 3 + b]
                );
            }
        }
    }

    #[test]
    fn pure_diffusion_matrix_is_symmetric() {
        let space = lshape_space(2);
        let data = PdeData::poisson(0.0);
        let b = assemble_b(&space, &data).unwrap();
        let dense = b.to_dense();
        let scale = dense.amax();
        let asym = (&dense - dense.transpose()).amax();
        assert!(asym <= 1e-12 * scale, "asymmetry {asym} at scale {scale}");
    }

    #[test]
    fn stiffness_equals_full_form_without_lower_order_terms() {
        let space = lshape_space(3);
        let data = PdeData::poisson(1.0);
        let b = assemble_b(&space, &data).unwrap();
        let a = assemble_a(&space, &data).unwrap();
        assert_eq!(a.nnz(), b.nnz());
        let diff = (a.to_dense() - b.to_dense()).amax();
        assert!(diff < 1e-14, "difference {diff}");
    }

    #[test]
    fn convection_matrix_is_positive_definite() {
        let space = lshape_space(2);
        let data = PdeData::benchmark();
        let b = assemble_b(&space, &data).unwrap();
        let n = space.num_dofs();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut y = vec![0.0; n];
        for _ in 0..100 {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            b.spmv(&x, &mut y);
            let quad = crate::linalg::dot(&x, &y);
            assert!(quad > 0.0, "xᵀBx = {quad} not positive");
        }
    }

    #[test]
    fn energy_norm_matches_elementwise_quadrature() {
        // x'Ax must equal the direct quadrature of ∫ K∇v·∇v for the function v
        // with coefficients x, summed element by element.
        let space = lshape_space(2);
        let data =
            PdeData::constant([[2.0, 0.5], [0.5, 1.0]], [0.0, 0.0], 0.0, 0.0).unwrap();
        let a = assemble_a(&space, &data).unwrap();
        let n = space.num_dofs();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut ax = vec![0.0; n];
        a.spmv(&x, &mut ax);
        let quad_form = crate::linalg::dot(&x, &ax);

        let basis = element_basis(2);
        let mut nodes = vec![0u32; space.n_local()];
        let mut oracle = 0.0;
        for t in 0..space.mesh().num_elements() {
            space.element_nodes(t, &mut nodes);
            let coords = space.mesh().element_coords(t);
            let (gl, det) = barycentric_gradients(&coords);
            for (q, _) in basis.qb.iter().enumerate() {
                let off = q * basis.n_local;
                let mut grad = [0.0f64; 2];
                for (a_loc, &node) in nodes.iter().enumerate() {
                    let dof = space.node_to_dof(node);
                    if dof == BOUNDARY {
                        continue;
                    }
                    let ci = x[dof as usize];
                    let d = basis.dl[off + a_loc];
                    grad[0] += ci * (d[0] * gl[0][0] + d[1] * gl[1][0] + d[2] * gl[2][0]);
                    grad[1] += ci * (d[0] * gl[0][1] + d[1] * gl[1][1] + d[2] * gl[2][1]);
                }
                let k = data.k(t, [0.0, 0.0]);
                let kg = [
                    k[0][0] * grad[0] + k[0][1] * grad[1],
                    k[1][0] * grad[0] + k[1][1] * grad[1],
                ];
                oracle += basis.qw[q] * det * (kg[0] * grad[0] + kg[1] * grad[1]);
            }
        }
        assert!(
            (quad_form - oracle).abs() < 1e-12 * oracle.abs().max(1.0),
            "{quad_form} vs {oracle}"
        );
    }

    #[test]
    fn stiffness_is_positive_definite_by_shifted_power_iteration() {
        // Inverse-free surrogate: largest eigenvalue by power iteration, then
        // the largest eigenvalue of (lmax I - A); their difference bounds the
        // smallest Ritz value from below.
        let space = lshape_space(2);
        let data = PdeData::poisson(0.0);
        let a = assemble_a(&space, &data).unwrap();
        let n = space.num_dofs();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let power = |shift: Option<f64>, steps: usize, rng: &mut ChaCha8Rng| {
            let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut av = vec![0.0; n];
            let mut lam = 0.0;
            for _ in 0..steps {
                let norm = crate::linalg::norm2(&v);
                crate::linalg::scal(1.0 / norm, &mut v);
                a.spmv(&v, &mut av);
                if let Some(s) = shift {
                    for (w, &vi) in av.iter_mut().zip(&v) {
                        *w = s * vi - *w;
                    }
                }
                lam = crate::linalg::dot(&v, &av);
                v.copy_from_slice(&av);
            }
            lam
        };
        let lmax = power(None, 200, &mut rng);
        let shifted_max = power(Some(lmax * 1.001), 200, &mut rng);
        let lmin_bound = lmax * 1.001 - shifted_max;
        assert!(
            lmin_bound > 0.0,
            "smallest Ritz value bound {lmin_bound} not positive"
        );
    }

    #[test]
    fn rhs_zero_data_is_zero() {
        let space = lshape_space(2);
        let data = PdeData::poisson(0.0);
        let rhs = assemble_rhs(&space, &data).unwrap();
        assert!(rhs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rhs_unit_source_p1_is_patch_area_thirds() {
        let space = lshape_space(1);
        let data = PdeData::poisson(1.0);
        let rhs = assemble_rhs(&space, &data).unwrap();
        for dof in 0..space.num_dofs() as u32 {
            let vertex = space.dof_to_node(dof) as usize;
            let patch = space.mesh().vertex_patch(vertex).unwrap();
            let expect: f64 = patch
                .indices()
                .iter()
                .map(|&t| space.mesh().element_area(t as usize) / 3.0)
                .sum();
            assert!(
                (rhs[dof as usize] - expect).abs() < 1e-14,
                "dof {dof}: {} vs {expect}",
                rhs[dof as usize]
            );
        }
    }

    #[test]
    fn rhs_gradient_source_matches_independent_quadrature() {
        // Constant fvec with an independent, finer collapsed rule as oracle.
        let space = lshape_space(3);
        let fv = [0.7, -0.3];
        let data = PdeData::poisson(0.0).with_source(
            Box::new(|_, _| 0.0),
            Box::new(move |_, _| fv),
        );
        let rhs = assemble_rhs(&space, &data).unwrap();

        let p = 3usize;
        let m = p + 4; // finer than the assembly rule
        let (gt, gw) = gauss_legendre_01(m);
        let mut oracle = vec![0.0f64; space.num_dofs()];
        let mut nodes = vec![0u32; space.n_local()];
        for t in 0..space.mesh().num_elements() {
            space.element_nodes(t, &mut nodes);
            let coords = space.mesh().element_coords(t);
            let (gl, det) = barycentric_gradients(&coords);
            for (iu, &u) in gt.iter().enumerate() {
                for (iv, &v) in gt.iter().enumerate() {
                    let xq = u;
                    let yq = v * (1.0 - u);
                    let w = gw[iu] * gw[iv] * (1.0 - u) * det;
                    let (_, grads) =
                        crate::fespace::basis::eval_basis_at(p, [1.0 - xq - yq, xq, yq]);
                    for (a, &node) in nodes.iter().enumerate() {
                        let dof = space.node_to_dof(node);
                        if dof == BOUNDARY {
                            continue;
                        }
                        let d = grads[a];
                        let g = [
                            d[0] * gl[0][0] + d[1] * gl[1][0] + d[2] * gl[2][0],
                            d[0] * gl[0][1] + d[1] * gl[1][1] + d[2] * gl[2][1],
                        ];
                        oracle[dof as usize] += w * (fv[0] * g[0] + fv[1] * g[1]);
                    }
                }
            }
        }
        for j in 0..space.num_dofs() {
            assert!(
                (rhs[j] - oracle[j]).abs() < 1e-13,
                "dof {j}: {} vs {}",
                rhs[j],
                oracle[j]
            );
        }
    }
}
