//! Adaptive finite elements with an optimally preconditioned, restarted GMRES
//! solver for nonsymmetric second-order elliptic problems.
//!
//! The crate implements the full pipeline for convection–diffusion–reaction
//! problems `-div(K grad u) + b · grad u + c u = f + div f_vec` on polygonal
//! domains with homogeneous Dirichlet boundary:
//!
//! * [`mesh`] — conforming triangulations with newest-vertex-bisection (NVB)
//!   refinement, mesh closure, and text-file I/O;
//! * [`linalg`] — compressed sparse row matrices, dense factorizations, and an
//!   incremental Givens least-squares solver for Hessenberg systems;
//! * [`fespace`] — Lagrange finite element spaces of degree 1–4, Galerkin
//!   assembly, nested-mesh prolongation, and a direct solver for reference
//!   solutions;
//! * [`estimator`] — the residual a-posteriori error estimator with
//!   element-volume and edge-jump contributions;
//! * [`precond`] — optimal multilevel additive Schwarz and symmetrized
//!   multigrid preconditioners built on local patch smoothers over the adaptive
//!   hierarchy;
//! * [`gmres`] — restarted GMRES in the preconditioner-weighted inner product
//!   with estimator-coupled stopping;
//! * [`adaptive`] — the outer adaptive loop: solve & estimate, a-posteriori
//!   solver-parameter control, Dörfler marking, NVB refinement with nested
//!   iteration, plus cost and rate bookkeeping;
//! * [`cli`] — the experiment driver behind the `afem` binary (adaptive runs,
//!   solver-robustness studies on frozen meshes, rate post-processing).

pub mod adaptive;
pub mod cli;
pub mod estimator;
pub mod fespace;
pub mod gmres;
pub mod linalg;
pub mod mesh;
pub mod precond;
