//! Continuous Lagrange finite element spaces with homogeneous Dirichlet
//! boundary conditions.
//!
//! A [`FeSpace`] wires a [`Triangulation`] to a polynomial degree `p ∈ 1..=4`.
//! Global Lagrange *nodes* are numbered deterministically — mesh vertices
//! first, then the `p − 1` interior nodes of every global edge in sorted-edge
//! order (walking from the lower- to the higher-numbered endpoint), then
//! element-interior nodes in element order. *Degrees of freedom* are the nodes
//! away from the domain boundary, numbered in node order; boundary nodes carry
//! no unknowns.

pub mod basis;
mod assemble;
mod pde;
mod prolong;
mod solve;

pub use assemble::{assemble_a, assemble_b, assemble_rhs, ElementKernels};
pub use pde::PdeData;
pub use prolong::prolongation;
pub use solve::galerkin_solve_direct;

use crate::mesh::{EdgeInfo, Triangulation};
use basis::element_basis;
use std::sync::Arc;
use thiserror::Error;

/// Errors produced by space construction, assembly, and solves.
#[derive(Debug, Error)]
pub enum FespaceError {
    #[error("unsupported polynomial degree {0} (supported: 1..=4)")]
    UnsupportedDegree(usize),
    #[error("coefficient data violates its contract: {0}")]
    CoefficientViolation(String),
    #[error("element {0} is degenerate (non-positive area)")]
    DegenerateElement(usize),
    #[error("fine space does not refine the coarse space")]
    NotNested,
    #[error("linear system is singular to working precision")]
    Singular,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Marker for "node is on the Dirichlet boundary" in [`FeSpace::node_to_dof`].
pub const BOUNDARY: u32 = u32::MAX;

/// A degree-`p` continuous Lagrange space with homogeneous Dirichlet
/// conditions on the full mesh boundary.
#[derive(Debug)]
pub struct FeSpace {
    mesh: Arc<Triangulation>,
    edge_info: EdgeInfo,
    p: usize,
    num_nodes: usize,
    /// Global node -> degree of freedom, or [`BOUNDARY`].
    node_to_dof: Vec<u32>,
    /// Degree of freedom -> global node.
    dof_to_node: Vec<u32>,
}

impl FeSpace {
    pub fn new(mesh: Arc<Triangulation>, p: usize) -> Result<Self, FespaceError> {
        if !(1..=basis::MAX_DEGREE).contains(&p) {
            return Err(FespaceError::UnsupportedDegree(p));
        }
        let edge_info = mesh.edge_info();
        let nv = mesh.num_vertices();
        let ne = edge_info.num_edges();
        let nt = mesh.num_elements();
        let n_int = basis::interior_nodes_per_element(p);
        let num_nodes = nv + (p - 1) * ne + n_int * nt;

        let mut node_to_dof = vec![BOUNDARY; num_nodes];
        let mut dof_to_node = Vec::new();
        let mut interior = |node: usize, node_to_dof: &mut Vec<u32>| {
            node_to_dof[node] = dof_to_node.len() as u32;
            dof_to_node.push(node as u32);
        };
        for v in 0..nv {
            if !mesh.is_boundary_vertex(v) {
                interior(v, &mut node_to_dof);
            }
        }
        for e in 0..ne {
            if !edge_info.is_boundary_edge(e) {
                for s in 0..(p - 1) {
                    interior(nv + e * (p - 1) + s, &mut node_to_dof);
                }
            }
        }
        for t in 0..nt {
            for i in 0..n_int {
                interior(nv + (p - 1) * ne + t * n_int + i, &mut node_to_dof);
            }
        }
        Ok(Self {
            mesh,
            edge_info,
            p,
            num_nodes,
            node_to_dof,
            dof_to_node,
        })
    }

    pub fn degree(&self) -> usize {
        self.p
    }

    pub fn mesh(&self) -> &Triangulation {
        &self.mesh
    }

    pub fn mesh_arc(&self) -> Arc<Triangulation> {
        Arc::clone(&self.mesh)
    }

    pub fn edge_info(&self) -> &EdgeInfo {
        &self.edge_info
    }

    /// Number of degrees of freedom (dimension of the space).
    pub fn num_dofs(&self) -> usize {
        self.dof_to_node.len()
    }

    /// Number of all Lagrange nodes, boundary included.
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Degree of freedom of a node, or [`BOUNDARY`].
    pub fn node_to_dof(&self, node: u32) -> u32 {
        self.node_to_dof[node as usize]
    }

    pub fn dof_to_node(&self, dof: u32) -> u32 {
        self.dof_to_node[dof as usize]
    }

    /// Number of local shape functions per element.
    pub fn n_local(&self) -> usize {
        (self.p + 1) * (self.p + 2) / 2
    }

    /// Global node ids of element `t` in the local node order of
    /// [`basis::local_nodes`]; `out` must hold [`FeSpace::n_local`] entries.
    pub fn element_nodes(&self, t: usize, out: &mut [u32]) {
        let p = self.p;
        let nv = self.mesh.num_vertices() as u32;
        let per_edge = (p - 1) as u32;
        let e = self.mesh.element(t);
        out[0] = e[0];
        out[1] = e[1];
        out[2] = e[2];
        let edge_ids = self.edge_info.element_edge_ids(t);
        let mut cursor = 3;
        for j in 0..3 {
            let (a, b) = (e[j], e[(j + 1) % 3]);
            let eid = edge_ids[j];
            let base = nv + eid * per_edge;
            for s in 1..p as u32 {
                // Global edge nodes walk from the lower to the higher vertex
                // index; flip the step when the local edge runs the other way.
                let step = if a < b { s } else { p as u32 - s };
                out[cursor] = base + step - 1;
                cursor += 1;
            }
        }
        let n_int = basis::interior_nodes_per_element(p) as u32;
        let base = nv + per_edge * self.edge_info.num_edges() as u32 + t as u32 * n_int;
        for i in 0..n_int {
            out[cursor] = base + i;
            cursor += 1;
        }
        debug_assert_eq!(cursor, self.n_local());
    }

    /// Physical coordinates of a global node.
    pub fn node_position(&self, node: u32) -> [f64; 2] {
        let p = self.p;
        let nv = self.mesh.num_vertices();
        let node = node as usize;
        if node < nv {
            return self.mesh.vertex(node);
        }
        let per_edge = p - 1;
        let ne = self.edge_info.num_edges();
        if node < nv + per_edge * ne {
            let rel = node - nv;
            let (eid, s) = (rel / per_edge, rel % per_edge + 1);
            let (a, b) = self.edge_info.edge_vertices(eid);
            let pa = self.mesh.vertex(a as usize);
            let pb = self.mesh.vertex(b as usize);
            let t = s as f64 / p as f64;
            return [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])];
        }
        let rel = node - nv - per_edge * ne;
        let n_int = basis::interior_nodes_per_element(p);
        let (t, i) = (rel / n_int, rel % n_int);
        let alpha = element_basis(p).nodes[3 + 3 * (p - 1) + i];
        let [pa, pb, pc] = self.mesh.element_coords(t);
        let (l0, l1, l2) = (
            alpha[0] as f64 / p as f64,
            alpha[1] as f64 / p as f64,
            alpha[2] as f64 / p as f64,
        );
        [
            l0 * pa[0] + l1 * pb[0] + l2 * pc[0],
            l0 * pa[1] + l1 * pb[1] + l2 * pc[1],
        ]
    }

    /// One element containing the given node (the lowest-index one).
    pub fn node_element(&self, node: u32) -> u32 {
        let p = self.p;
        let nv = self.mesh.num_vertices();
        let node = node as usize;
        if node < nv {
            let (offsets, incident) = self.vertex_incidence();
            return incident[offsets[node] as usize];
        }
        let per_edge = p - 1;
        let ne = self.edge_info.num_edges();
        if node < nv + per_edge * ne {
            let eid = (node - nv) / per_edge;
            return self.edge_info.elements_of(eid)[0];
        }
        let n_int = basis::interior_nodes_per_element(p);
        ((node - nv - per_edge * ne) / n_int) as u32
    }

    fn vertex_incidence(&self) -> (Vec<u32>, Vec<u32>) {
        self.mesh.vertex_element_incidence()
    }

    /// Evaluates the function with the given coefficient vector (indexed by
    /// degree of freedom, boundary nodes implicitly zero) at a barycentric
    /// point of element `t`.
    pub fn eval(&self, coeffs: &[f64], t: usize, lambda: [f64; 3]) -> f64 {
        let (vals, _) = basis::eval_basis_at(self.p, lambda);
        let mut nodes = vec![0u32; self.n_local()];
        self.element_nodes(t, &mut nodes);
        let mut acc = 0.0;
        for (a, &node) in nodes.iter().enumerate() {
            let dof = self.node_to_dof[node as usize];
            if dof != BOUNDARY {
                acc += coeffs[dof as usize] * vals[a];
            }
        }
        acc
    }
}

/// Constant-per-element gradients of the barycentric coordinates and the
/// doubled element area.
pub(crate) fn barycentric_gradients(coords: &[[f64; 2]; 3]) -> ([[f64; 2]; 3], f64) {
    let [a, b, c] = coords;
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    let grads = [
        [(b[1] - c[1]) / det, (c[0] - b[0]) / det],
        [(c[1] - a[1]) / det, (a[0] - c[0]) / det],
        [(a[1] - b[1]) / det, (b[0] - a[0]) / det],
    ];
    (grads, det)
}
