//! Canonical embedding between nested spaces.
//!
//! For a fine space on a refinement of the coarse mesh (and coarse degree 1 or
//! equal to the fine degree), the coarse functions are contained in the fine
//! space, so nodal interpolation is exact: row `i` of the prolongation matrix
//! holds the coarse shape-function values at fine node `i`.

use super::basis::eval_basis_at;
use super::{FeSpace, FespaceError, BOUNDARY};
use crate::linalg::{CsrBuilder, CsrMatrix};

/// Values this close to an integer grid point of the interpolation table are
/// exact 0/1 hits polluted by roundoff; snapping keeps identity embeddings
/// exact and the matrix sparse. Genuine interpolation weights are rationals
/// with small denominators, far above this threshold.
const SNAP_TOL: f64 = 1e-12;

/// Builds the prolongation (embedding) matrix from `coarse` to `fine`:
/// `N_fine x N_coarse` over degrees of freedom, with boundary nodes of both
/// spaces eliminated.
pub fn prolongation(coarse: &FeSpace, fine: &FeSpace) -> Result<CsrMatrix, FespaceError> {
    let pc = coarse.degree();
    let pf = fine.degree();
    if pc != 1 && pc != pf {
        return Err(FespaceError::Dimension(format!(
            "prolongation supports coarse degree 1 or {pf}, got {pc}"
        )));
    }
    let same_mesh = std::sync::Arc::ptr_eq(&coarse.mesh_arc(), &fine.mesh_arc())
        || (coarse.mesh().num_vertices() == fine.mesh().num_vertices()
            && coarse.mesh().elements() == fine.mesh().elements());
    // Fine element -> containing coarse element.
    let parent: Vec<u32> = if same_mesh {
        (0..fine.mesh().num_elements() as u32).collect()
    } else {
        let nv_c = coarse.mesh().num_vertices();
        if fine.mesh().num_vertices() < nv_c {
            return Err(FespaceError::NotNested);
        }
        for i in 0..nv_c {
            let a = coarse.mesh().vertex(i);
            let b = fine.mesh().vertex(i);
            if a[0].to_bits() != b[0].to_bits() || a[1].to_bits() != b[1].to_bits() {
                return Err(FespaceError::NotNested);
            }
        }
        let parents = fine.mesh().parents();
        if parents.len() != fine.mesh().num_elements()
            || parents
                .iter()
                .any(|&p| p as usize >= coarse.mesh().num_elements())
        {
            return Err(FespaceError::NotNested);
        }
        parents.to_vec()
    };

    if same_mesh && pc == pf {
        return Ok(CsrMatrix::identity(fine.num_dofs()));
    }

    // One containing fine element per fine node (lowest element index).
    let n_local_f = fine.n_local();
    let mut node_elem = vec![u32::MAX; fine.num_nodes()];
    let mut nodes = vec![0u32; n_local_f];
    for t in 0..fine.mesh().num_elements() {
        fine.element_nodes(t, &mut nodes);
        for &n in &nodes {
            if node_elem[n as usize] == u32::MAX {
                node_elem[n as usize] = t as u32;
            }
        }
    }

    let n_local_c = coarse.n_local();
    let mut coarse_nodes = vec![0u32; n_local_c];
    let nf = fine.num_dofs();
    let mut builder = CsrBuilder::new(nf, coarse.num_dofs());
    for i in 0..nf {
        builder.count(i, n_local_c);
    }
    builder.begin_fill();
    for i in 0..nf as u32 {
        let node = fine.dof_to_node(i);
        let tf = node_elem[node as usize] as usize;
        let tc = parent[tf] as usize;
        let x = fine.node_position(node);
        let lambda = barycentric_in(coarse, tc, x);
        let (vals, _) = eval_basis_at(pc, lambda);
        coarse.element_nodes(tc, &mut coarse_nodes);
        for (a, &cnode) in coarse_nodes.iter().enumerate() {
            let cdof = coarse.node_to_dof(cnode);
            if cdof == BOUNDARY {
                continue;
            }
            let v = snap(vals[a]);
            if v != 0.0 {
                builder.push(i as usize, cdof as usize, v);
            }
        }
    }
    Ok(builder.finish())
}

fn snap(v: f64) -> f64 {
    if v.abs() < SNAP_TOL {
        0.0
    } else if (v - 1.0).abs() < SNAP_TOL {
        1.0
    } else {
        v
    }
}

/// Barycentric coordinates of a physical point in element `t`.
fn barycentric_in(space: &FeSpace, t: usize, x: [f64; 2]) -> [f64; 3] {
    let [a, b, c] = space.mesh().element_coords(t);
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    let l1 = ((x[0] - a[0]) * (c[1] - a[1]) - (x[1] - a[1]) * (c[0] - a[0])) / det;
    let l2 = ((b[0] - a[0]) * (x[1] - a[1]) - (b[1] - a[1]) * (x[0] - a[0])) / det;
    [1.0 - l1 - l2, l1, l2]
}
