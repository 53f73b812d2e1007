//! Newest-vertex bisection with conformity closure.
//!
//! Bisecting element `(a, b, p)` at the midpoint `m` of its reference edge
//! `(a, b)` produces the children `(p, a, m)` and `(b, p, m)`; the children's
//! reference edges are `(p, a)` and `(b, p)`, so each child's newest vertex is
//! the midpoint just created. A marked element has all three of its edges
//! marked, so it is refined by three bisections into four children — the
//! standard 2D marked-element rule, which keeps the data oscillation of the
//! marked region shrinking at the full rate. Closure then marks the reference
//! edge of every element that has any marked edge; once that fixpoint is
//! reached, an element splits into two, three, or four children depending on
//! how many of its edges are marked, and the result is conforming.

use super::{MarkSet, MeshError, Triangulation};

impl Triangulation {
    /// Refines the mesh so that at least every element of `marks` is bisected,
    /// restoring conformity by closure. Vertices of `self` keep their indices;
    /// edge midpoints are appended in increasing sorted-edge order.
    pub fn refine(&self, marks: &MarkSet) -> Result<Triangulation, MeshError> {
        let ne = self.num_elements();
        if let Some(&worst) = marks.indices().last() {
            if worst as usize >= ne {
                return Err(MeshError::ElementOutOfRange(worst as usize, ne));
            }
        }
        if marks.is_empty() {
            let mut copy = self.clone();
            copy.parent = (0..ne as u32).collect();
            copy.level = self.level + 1;
            return Ok(copy);
        }
        let info = self.edge_info();
        let nedges = info.num_edges();

        // Marked elements contribute all three edges; closure then lets every
        // marked edge force the reference edge of each incident element. Each
        // edge enters the worklist at most once.
        let mut edge_marked = vec![false; nedges];
        let mut worklist: Vec<u32> = Vec::new();
        for &t in marks.indices() {
            for e in info.element_edge_ids(t as usize) {
                if !edge_marked[e as usize] {
                    edge_marked[e as usize] = true;
                    worklist.push(e);
                }
            }
        }
        while let Some(e) = worklist.pop() {
            for &t in info.elements_of(e as usize) {
                let ref_edge = info.element_edge_ids(t as usize)[0];
                if !edge_marked[ref_edge as usize] {
                    edge_marked[ref_edge as usize] = true;
                    worklist.push(ref_edge);
                }
            }
        }

        // Midpoints for marked edges, appended in edge-id (sorted-pair) order.
        let mut vertices = self.vertices.clone();
        let mut boundary_vertex = self.boundary_vertex.clone();
        let mut vertex_level = self.vertex_level.clone();
        let new_level = self.level + 1;
        let mut midpoint = vec![u32::MAX; nedges];
        for e in 0..nedges {
            if edge_marked[e] {
                let (a, b) = info.edge_vertices(e);
                let pa = vertices[a as usize];
                let pb = vertices[b as usize];
                midpoint[e] = vertices.len() as u32;
                vertices.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
                boundary_vertex.push(info.is_boundary_edge(e));
                vertex_level.push(new_level);
            }
        }

        // Emit children. Only original edges can be marked, so the recursion
        // stops after the second generation (at most four children).
        let mut elements: Vec<[u32; 3]> = Vec::with_capacity(ne + 2 * marks.len());
        let mut parent: Vec<u32> = Vec::with_capacity(elements.capacity());
        for t in 0..ne {
            let [e_ab, e_bp, e_pa] = info.element_edge_ids(t);
            let [a, b, p] = self.elements[t];
            if !edge_marked[e_ab as usize] {
                debug_assert!(!edge_marked[e_bp as usize] && !edge_marked[e_pa as usize]);
                elements.push([a, b, p]);
                parent.push(t as u32);
                continue;
            }
            let m = midpoint[e_ab as usize];
            // First child (p, a, m): reference edge (p, a).
            if edge_marked[e_pa as usize] {
                let m2 = midpoint[e_pa as usize];
                elements.push([m, p, m2]);
                elements.push([a, m, m2]);
                parent.push(t as u32);
                parent.push(t as u32);
            } else {
                elements.push([p, a, m]);
                parent.push(t as u32);
            }
            // Second child (b, p, m): reference edge (b, p).
            if edge_marked[e_bp as usize] {
                let m2 = midpoint[e_bp as usize];
                elements.push([m, b, m2]);
                elements.push([p, m, m2]);
                parent.push(t as u32);
                parent.push(t as u32);
            } else {
                elements.push([b, p, m]);
                parent.push(t as u32);
            }
        }

        Ok(Triangulation {
            vertices,
            elements,
            boundary_vertex,
            vertex_level,
            parent,
            level: new_level,
        })
    }

    /// Refines every element (`marks` = all); convenience for uniform steps.
    pub fn refine_uniform(&self) -> Result<Triangulation, MeshError> {
        self.refine(&(0..self.num_elements() as u32).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::changed_vertices;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_marks_is_identity() {
        let mesh = Triangulation::lshape();
        let same = mesh.refine(&MarkSet::empty()).unwrap();
        assert_eq!(same.elements(), mesh.elements());
        assert_eq!(same.num_vertices(), mesh.num_vertices());
    }

    #[test]
    fn marked_element_is_bisected() {
        let mesh = Triangulation::lshape();
        let marked = mesh.element(7);
        let refined = mesh.refine(&MarkSet::new(vec![7])).unwrap();
        refined.validate().unwrap();
        assert!(refined.num_elements() > mesh.num_elements());
        // The marked element's vertex triple must be gone.
        assert!(!refined.elements().contains(&marked));
        // Marked elements are refined by three bisections into four children.
        let children = refined.parents().iter().filter(|&&p| p == 7).count();
        assert_eq!(children, 4);
        // Old vertices keep their indices and coordinates.
        for i in 0..mesh.num_vertices() {
            assert_eq!(refined.vertex(i), mesh.vertex(i));
        }
    }

    #[test]
    fn out_of_range_mark_is_rejected() {
        let mesh = Triangulation::lshape();
        assert!(matches!(
            mesh.refine(&MarkSet::new(vec![48])),
            Err(MeshError::ElementOutOfRange(48, 48))
        ));
    }

    #[test]
    fn child_areas_halve() {
        let mesh = Triangulation::lshape();
        let refined = mesh.refine(&MarkSet::new(vec![0])).unwrap();
        for (t, &p) in refined.parents().iter().enumerate() {
            let parent_area = mesh.element_area(p as usize);
            let child_area = refined.element_area(t);
            let generations = (parent_area / child_area).log2().round() as i32;
            assert!(
                (0..=2).contains(&generations),
                "element {t}: parent area {parent_area}, child area {child_area}"
            );
            let expected = parent_area / f64::powi(2.0, generations);
            assert!((child_area - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_refinement_quadruples_eventually() {
        // Two uniform NVB generations split every triangle into four.
        let mesh = Triangulation::lshape();
        let once = mesh.refine_uniform().unwrap();
        let twice = once.refine_uniform().unwrap();
        once.validate().unwrap();
        twice.validate().unwrap();
        assert!(once.num_elements() >= 2 * mesh.num_elements());
        assert!(twice.num_elements() >= 4 * mesh.num_elements());
        assert!((twice.total_area() - 3.0).abs() < 1e-13);
    }

    #[test]
    fn changed_vertices_uniform_refinement_is_everything() {
        let mesh = Triangulation::lshape();
        let fine = mesh.refine_uniform().unwrap();
        let v_plus = changed_vertices(&mesh, &fine).unwrap();
        assert_eq!(v_plus.len(), fine.num_vertices());
    }

    #[test]
    fn changed_vertices_matches_bisected_parent_oracle() {
        // Structural patch comparison must agree with the lineage oracle:
        // new vertices plus all vertices of elements that got bisected.
        let mesh = Triangulation::lshape();
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = rng.gen_range(0..mesh.num_elements() as u32);
            let fine = mesh.refine(&MarkSet::new(vec![t])).unwrap();
            let v_plus = changed_vertices(&mesh, &fine).unwrap();

            let mut child_count = vec![0u32; mesh.num_elements()];
            for &p in fine.parents() {
                child_count[p as usize] += 1;
            }
            let mut oracle: Vec<u32> = (mesh.num_vertices() as u32
                ..fine.num_vertices() as u32)
                .collect();
            for (p, &c) in child_count.iter().enumerate() {
                if c >= 2 {
                    oracle.extend(mesh.element(p));
                }
            }
            oracle.sort_unstable();
            oracle.dedup();
            assert_eq!(v_plus, oracle, "seed {seed}");
        }
    }

    #[test]
    fn single_pair_bisection_changed_set() {
        // A compatible pair bisected at its shared reference edge: the changed
        // set is the new midpoint plus the four corners of the two elements.
        // Built by hand because `refine` splits a marked pair further.
        let prev = Triangulation::from_parts(
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            vec![[2, 0, 1], [0, 2, 3]],
        )
        .unwrap();
        let next = Triangulation::from_parts(
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5]],
            vec![[1, 2, 4], [0, 1, 4], [3, 0, 4], [2, 3, 4]],
        )
        .unwrap();
        let v_plus = changed_vertices(&prev, &next).unwrap();
        assert_eq!(v_plus, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn closure_cost_stays_bounded_over_random_marking() {
        // Ten random marking steps: the accumulated element growth must stay
        // within a fixed multiple of the accumulated mark counts.
        let mut rng = ChaCha8Rng::seed_from_u64(2718);
        let mut mesh = Triangulation::lshape();
        let n0 = mesh.num_elements();
        let mut total_marks = 0usize;
        for _ in 0..10 {
            let ne = mesh.num_elements();
            let count = rng.gen_range(1..=(ne / 4).max(1));
            let marks: MarkSet = (0..count)
                .map(|_| rng.gen_range(0..ne as u32))
                .collect();
            total_marks += marks.len();
            mesh = mesh.refine(&marks).unwrap();
            mesh.validate().unwrap();
        }
        let growth = mesh.num_elements() - n0;
        let ratio = growth as f64 / total_marks as f64;
        // A marked element alone accounts for three new elements; measured
        // ratios with closure spillover sit near 8.9. The closure estimate
        // promises a finite constant, and 16 gives comfortable slack without
        // hiding regressions.
        assert!(
            ratio <= 16.0,
            "closure growth ratio {ratio} exceeded the recorded bound"
        );
    }

    #[test]
    fn determinism_bitwise() {
        let mesh = Triangulation::lshape();
        let marks = MarkSet::new(vec![3, 17, 40]);
        let a = mesh.refine(&marks).unwrap();
        let b = mesh.refine(&marks).unwrap();
        assert_eq!(a.elements(), b.elements());
        assert_eq!(a.num_vertices(), b.num_vertices());
        for i in 0..a.num_vertices() {
            assert_eq!(a.vertex(i)[0].to_bits(), b.vertex(i)[0].to_bits());
            assert_eq!(a.vertex(i)[1].to_bits(), b.vertex(i)[1].to_bits());
        }
    }
}
