//! Conforming triangulations with newest-vertex-bisection refinement.
//!
//! A [`Triangulation`] stores 2D vertices and vertex-index triples. Each
//! element designates its *reference edge* — always the edge between its first
//! two vertices after internal normalisation — and its third vertex is the
//! *newest vertex* of the standard bisection rule. Refining a marked element
//! set ([`Triangulation::refine`]) bisects at least the marked elements and
//! restores conformity by recursive closure; vertex indices of the coarse mesh
//! are preserved and new midpoints are appended.
//!
//! All constructions are deterministic: edge identities use a sorted-pair
//! integer index (no hashing), so identical inputs produce bit-identical
//! meshes.

mod io;
mod refine;

use thiserror::Error;

/// Errors produced by mesh construction, refinement, validation, and I/O.
#[derive(Debug, Error)]
pub enum MeshError {
    #[error("element index {0} out of range ({1} elements)")]
    ElementOutOfRange(usize, usize),
    #[error("vertex index {0} out of range ({1} vertices)")]
    VertexOutOfRange(usize, usize),
    #[error("element {0} has non-positive signed area")]
    NonPositiveArea(usize),
    #[error("edge ({0}, {1}) is shared by {2} elements; mesh is not conforming")]
    NonConformingEdge(u32, u32, usize),
    #[error("vertex {0} hangs on edge ({1}, {2})")]
    HangingNode(u32, u32, u32),
    #[error("second mesh is not a refinement of the first")]
    NotARefinement,
    #[error("stored boundary flag disagrees with edge incidence at vertex {0}")]
    BoundaryFlagMismatch(usize),
    #[error("malformed mesh file: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A sorted, duplicate-free set of element indices to be refined.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MarkSet {
    indices: Vec<u32>,
}

impl MarkSet {
    /// Builds a mark set; the input is sorted and deduplicated.
    pub fn new(mut indices: Vec<u32>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self { indices }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, element: u32) -> bool {
        self.indices.binary_search(&element).is_ok()
    }
}

impl FromIterator<u32> for MarkSet {
    fn from_iter<I: IntoIterator<Item = u32>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

/// A conforming triangulation of a polygonal 2D domain.
#[derive(Debug, Clone)]
pub struct Triangulation {
    /// Vertex coordinates.
    vertices: Vec<[f64; 2]>,
    /// Element vertex triples; the reference edge is `(v[0], v[1])` and `v[2]`
    /// is the newest vertex.
    elements: Vec<[u32; 3]>,
    /// Whether each vertex lies on the domain boundary.
    boundary_vertex: Vec<bool>,
    /// Refinement generation at which each vertex was created (0 for meshes
    /// built from scratch or loaded from file).
    vertex_level: Vec<u32>,
    /// For each element, the index of the containing element in the mesh this
    /// one was refined from (identity for root meshes).
    parent: Vec<u32>,
    /// Refinement generation of the mesh itself.
    level: u32,
}

/// Edge incidence tables of a triangulation.
///
/// Edges are identified by their sorted vertex pair packed into a `u64`
/// (`lo << 32 | hi`); the table stores the unique keys in increasing order, so
/// edge ids are deterministic. This ordering also fixes the global edge
/// numbering used for edge-based degrees of freedom.
#[derive(Debug, Clone)]
pub struct EdgeInfo {
    /// Sorted unique packed edge keys.
    keys: Vec<u64>,
    /// Edge ids of each element: local edge `j` is `(v[j], v[(j+1)%3])`.
    element_edges: Vec<[u32; 3]>,
    /// CSR offsets into `incident` per edge id.
    offsets: Vec<u32>,
    /// Incident elements, grouped by edge id, each group in increasing order.
    incident: Vec<u32>,
}

#[inline]
pub(crate) fn edge_key(a: u32, b: u32) -> u64 {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    ((lo as u64) << 32) | hi as u64
}

impl EdgeInfo {
    fn build(elements: &[[u32; 3]]) -> Self {
        let mut keys: Vec<u64> = Vec::with_capacity(3 * elements.len());
        for e in elements {
            keys.push(edge_key(e[0], e[1]));
            keys.push(edge_key(e[1], e[2]));
            keys.push(edge_key(e[2], e[0]));
        }
        keys.sort_unstable();
        keys.dedup();
        let mut element_edges = Vec::with_capacity(elements.len());
        let mut counts = vec![0u32; keys.len()];
        for e in elements {
            let ids = [
                keys.binary_search(&edge_key(e[0], e[1])).unwrap() as u32,
                keys.binary_search(&edge_key(e[1], e[2])).unwrap() as u32,
                keys.binary_search(&edge_key(e[2], e[0])).unwrap() as u32,
            ];
            for id in ids {
                counts[id as usize] += 1;
            }
            element_edges.push(ids);
        }
        let mut offsets = Vec::with_capacity(keys.len() + 1);
        offsets.push(0u32);
        let mut acc = 0u32;
        for c in &counts {
            acc += c;
            offsets.push(acc);
        }
        let mut cursor: Vec<u32> = offsets[..keys.len()].to_vec();
        let mut incident = vec![0u32; acc as usize];
        for (t, ids) in element_edges.iter().enumerate() {
            for id in ids {
                let slot = cursor[*id as usize];
                incident[slot as usize] = t as u32;
                cursor[*id as usize] = slot + 1;
            }
        }
        Self {
            keys,
            element_edges,
            offsets,
            incident,
        }
    }

    pub fn num_edges(&self) -> usize {
        self.keys.len()
    }

    /// Endpoints of edge `e` with the smaller vertex index first.
    pub fn edge_vertices(&self, e: usize) -> (u32, u32) {
        let key = self.keys[e];
        ((key >> 32) as u32, key as u32)
    }

    /// Edge id of the sorted pair `(a, b)`, if that edge exists.
    pub fn edge_id(&self, a: u32, b: u32) -> Option<u32> {
        self.keys.binary_search(&edge_key(a, b)).ok().map(|i| i as u32)
    }

    /// Elements incident to edge `e` (one or two in a conforming mesh).
    pub fn elements_of(&self, e: usize) -> &[u32] {
        &self.incident[self.offsets[e] as usize..self.offsets[e + 1] as usize]
    }

    /// An edge is a boundary edge when only one element contains it.
    pub fn is_boundary_edge(&self, e: usize) -> bool {
        self.offsets[e + 1] - self.offsets[e] == 1
    }

    /// Edge ids of element `t`: local edge `j` joins vertices `j` and
    /// `(j+1) % 3`.
    pub fn element_edge_ids(&self, t: usize) -> [u32; 3] {
        self.element_edges[t]
    }
}

impl Triangulation {
    /// Builds a triangulation from raw parts, computing boundary flags from
    /// edge incidence and validating conformity.
    pub fn from_parts(
        vertices: Vec<[f64; 2]>,
        elements: Vec<[u32; 3]>,
    ) -> Result<Self, MeshError> {
        // Bounds must hold before any edge table is built.
        for e in &elements {
            for v in e {
                if *v as usize >= vertices.len() {
                    return Err(MeshError::VertexOutOfRange(*v as usize, vertices.len()));
                }
            }
        }
        let n = elements.len();
        let parent = (0..n as u32).collect();
        let vertex_level = vec![0; vertices.len()];
        let mut mesh = Self {
            boundary_vertex: Vec::new(),
            vertices,
            elements,
            vertex_level,
            parent,
            level: 0,
        };
        mesh.boundary_vertex = mesh.compute_boundary_flags()?;
        mesh.validate()?;
        Ok(mesh)
    }

    /// Rebuilds a refined triangulation whose parent links into its coarser
    /// predecessor are known, e.g. when loading a stored mesh hierarchy.
    /// Parent indices are validated for length here and for range by the
    /// consumers that pair this mesh with its predecessor.
    pub fn from_parts_with_parents(
        vertices: Vec<[f64; 2]>,
        elements: Vec<[u32; 3]>,
        parents: Vec<u32>,
        level: u32,
    ) -> Result<Self, MeshError> {
        if parents.len() != elements.len() {
            return Err(MeshError::Parse(format!(
                "{} parent entries for {} elements",
                parents.len(),
                elements.len()
            )));
        }
        let mut mesh = Self::from_parts(vertices, elements)?;
        mesh.parent = parents;
        mesh.level = level;
        Ok(mesh)
    }

    /// The initial triangulation of the L-shaped domain
    /// `(-1,1)^2 \ [0,1] x [-1,0]`: a criss-cross grid of twelve squares of
    /// side 1/2, each split into four triangles through its centre, giving 48
    /// elements and 33 vertices. Reference edges are the longest edge of each
    /// element (the square side), ties broken by the smallest opposite-vertex
    /// index.
    pub fn lshape() -> Self {
        // Coordinates in units of 1/4 so that every vertex (corners and
        // centres) has exact dyadic coordinates.
        let mut index: std::collections::BTreeMap<(i8, i8), u32> = std::collections::BTreeMap::new();
        let mut vertices: Vec<[f64; 2]> = Vec::new();
        let vid = |index: &mut std::collections::BTreeMap<(i8, i8), u32>,
                       vertices: &mut Vec<[f64; 2]>,
                       p: (i8, i8)| {
            *index.entry(p).or_insert_with(|| {
                vertices.push([p.0 as f64 * 0.25, p.1 as f64 * 0.25]);
                (vertices.len() - 1) as u32
            })
        };
        let mut elements: Vec<[u32; 3]> = Vec::new();
        for iy in (-4..4).step_by(2) {
            for ix in (-4..4).step_by(2) {
                // Skip the removed quadrant [0,1] x [-1,0].
                if ix >= 0 && iy < 0 {
                    continue;
                }
                let c00 = vid(&mut index, &mut vertices, (ix, iy));
                let c10 = vid(&mut index, &mut vertices, (ix + 2, iy));
                let c11 = vid(&mut index, &mut vertices, (ix + 2, iy + 2));
                let c01 = vid(&mut index, &mut vertices, (ix, iy + 2));
                let ctr = vid(&mut index, &mut vertices, (ix + 1, iy + 1));
                // Four counter-clockwise triangles, square side first so the
                // longest-edge rule below keeps it as the reference edge.
                elements.push([c00, c10, ctr]);
                elements.push([c10, c11, ctr]);
                elements.push([c11, c01, ctr]);
                elements.push([c01, c00, ctr]);
            }
        }
        normalize_ref_edges_longest(&mut elements, &vertices);
        let mesh = Self::from_parts(vertices, elements).expect("initial L-shape mesh is valid");
        debug_assert_eq!(mesh.num_elements(), 48);
        debug_assert_eq!(mesh.num_vertices(), 33);
        mesh
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn vertex(&self, i: usize) -> [f64; 2] {
        self.vertices[i]
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    /// Vertex triple of element `t`; `(v[0], v[1])` is the reference edge.
    pub fn element(&self, t: usize) -> [u32; 3] {
        self.elements[t]
    }

    pub fn elements(&self) -> &[[u32; 3]] {
        &self.elements
    }

    pub fn is_boundary_vertex(&self, i: usize) -> bool {
        self.boundary_vertex[i]
    }

    /// Refinement generation at which vertex `i` was created.
    pub fn vertex_level(&self, i: usize) -> u32 {
        self.vertex_level[i]
    }

    /// Parent element indices into the mesh this one was refined from.
    pub fn parents(&self) -> &[u32] {
        &self.parent
    }

    /// Refinement generation of the mesh (0 for root meshes).
    pub fn level(&self) -> u32 {
        self.level
    }

    /// Corner coordinates of element `t`.
    pub fn element_coords(&self, t: usize) -> [[f64; 2]; 3] {
        let e = self.elements[t];
        [
            self.vertices[e[0] as usize],
            self.vertices[e[1] as usize],
            self.vertices[e[2] as usize],
        ]
    }

    /// Signed doubled area of element `t` (positive for counter-clockwise).
    pub fn signed_area2(&self, t: usize) -> f64 {
        let [a, b, c] = self.element_coords(t);
        (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    }

    /// Area of element `t`.
    pub fn element_area(&self, t: usize) -> f64 {
        0.5 * self.signed_area2(t)
    }

    /// Sum of all element areas.
    pub fn total_area(&self) -> f64 {
        (0..self.num_elements()).map(|t| self.element_area(t)).sum()
    }

    /// Builds the edge incidence tables.
    pub fn edge_info(&self) -> EdgeInfo {
        EdgeInfo::build(&self.elements)
    }

    /// Elements containing vertex `z`, as a mark set.
    ///
    /// This scans the full element list; batch consumers should build
    /// [`Triangulation::vertex_element_incidence`] once instead.
    pub fn vertex_patch(&self, z: usize) -> Result<MarkSet, MeshError> {
        if z >= self.num_vertices() {
            return Err(MeshError::VertexOutOfRange(z, self.num_vertices()));
        }
        let z = z as u32;
        Ok(self
            .elements
            .iter()
            .enumerate()
            .filter(|(_, e)| e.contains(&z))
            .map(|(t, _)| t as u32)
            .collect())
    }

    /// CSR incidence from vertices to the elements containing them.
    pub fn vertex_element_incidence(&self) -> (Vec<u32>, Vec<u32>) {
        let nv = self.num_vertices();
        let mut counts = vec![0u32; nv];
        for e in &self.elements {
            for v in e {
                counts[*v as usize] += 1;
            }
        }
        let mut offsets = Vec::with_capacity(nv + 1);
        offsets.push(0u32);
        let mut acc = 0u32;
        for c in &counts {
            acc += c;
            offsets.push(acc);
        }
        let mut cursor = offsets[..nv].to_vec();
        let mut incident = vec![0u32; acc as usize];
        for (t, e) in self.elements.iter().enumerate() {
            for v in e {
                let slot = cursor[*v as usize];
                incident[slot as usize] = t as u32;
                cursor[*v as usize] = slot + 1;
            }
        }
        (offsets, incident)
    }

    /// Recomputes per-vertex boundary flags from edge incidence.
    fn compute_boundary_flags(&self) -> Result<Vec<bool>, MeshError> {
        let info = self.edge_info();
        let mut flags = vec![false; self.num_vertices()];
        for e in 0..info.num_edges() {
            if info.is_boundary_edge(e) {
                let (a, b) = info.edge_vertices(e);
                flags[a as usize] = true;
                flags[b as usize] = true;
            }
        }
        Ok(flags)
    }

    /// Checks index bounds, orientation, conformity, and boundary flags.
    ///
    /// The hanging-node probe looks for a stored vertex sitting exactly at the
    /// midpoint of a boundary-candidate edge — the only way bisection can
    /// produce a nonconforming pair — using bit-exact coordinates.
    pub fn validate(&self) -> Result<(), MeshError> {
        let nv = self.num_vertices();
        for (t, e) in self.elements.iter().enumerate() {
            for v in e {
                if *v as usize >= nv {
                    return Err(MeshError::VertexOutOfRange(*v as usize, nv));
                }
            }
            if e[0] == e[1] || e[1] == e[2] || e[2] == e[0] {
                return Err(MeshError::NonPositiveArea(t));
            }
            if self.signed_area2(t) <= 0.0 {
                return Err(MeshError::NonPositiveArea(t));
            }
        }
        let info = self.edge_info();
        let mut coord_index: std::collections::BTreeMap<(u64, u64), u32> =
            std::collections::BTreeMap::new();
        for (i, v) in self.vertices.iter().enumerate() {
            coord_index.insert((v[0].to_bits(), v[1].to_bits()), i as u32);
        }
        for e in 0..info.num_edges() {
            let n = info.elements_of(e).len();
            let (a, b) = info.edge_vertices(e);
            if n > 2 {
                return Err(MeshError::NonConformingEdge(a, b, n));
            }
            if n == 1 {
                let pa = self.vertices[a as usize];
                let pb = self.vertices[b as usize];
                let mid = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
                if let Some(&z) = coord_index.get(&(mid[0].to_bits(), mid[1].to_bits())) {
                    if z != a && z != b {
                        return Err(MeshError::HangingNode(z, a, b));
                    }
                }
            }
        }
        let computed = self.compute_boundary_flags()?;
        for (i, (stored, fresh)) in self.boundary_vertex.iter().zip(&computed).enumerate() {
            if stored != fresh {
                return Err(MeshError::BoundaryFlagMismatch(i));
            }
        }
        Ok(())
    }
}

/// Set of vertices whose surroundings changed between a mesh and one of its
/// refinements: all newly created vertices plus every carried-over vertex whose
/// element patch differs (as a set of vertex triples) between the two meshes.
pub fn changed_vertices(prev: &Triangulation, next: &Triangulation) -> Result<Vec<u32>, MeshError> {
    if next.num_vertices() < prev.num_vertices() {
        return Err(MeshError::NotARefinement);
    }
    for i in 0..prev.num_vertices() {
        let a = prev.vertices[i];
        let b = next.vertices[i];
        if a[0].to_bits() != b[0].to_bits() || a[1].to_bits() != b[1].to_bits() {
            return Err(MeshError::NotARefinement);
        }
    }
    let canon = |e: &[u32; 3]| {
        let mut s = *e;
        s.sort_unstable();
        s
    };
    // Per-vertex sorted patch signatures in both meshes; a carried-over vertex
    // is "changed" exactly when some incident element was bisected, which the
    // triple comparison detects structurally.
    let patches = |mesh: &Triangulation, nv: usize| -> Vec<Vec<[u32; 3]>> {
        let mut p = vec![Vec::new(); nv];
        for e in &mesh.elements {
            let c = canon(e);
            for v in e {
                if (*v as usize) < nv {
                    p[*v as usize].push(c);
                }
            }
        }
        for list in &mut p {
            list.sort_unstable();
        }
        p
    };
    let old_nv = prev.num_vertices();
    let prev_patches = patches(prev, old_nv);
    let next_patches = patches(next, old_nv);
    let mut out: Vec<u32> = Vec::new();
    for z in 0..old_nv {
        if prev_patches[z] != next_patches[z] {
            out.push(z as u32);
        }
    }
    out.extend(old_nv as u32..next.num_vertices() as u32);
    Ok(out)
}

/// Rotates each element triple so its longest edge comes first (reference
/// position); ties are broken by the smallest opposite-vertex index.
fn normalize_ref_edges_longest(elements: &mut [[u32; 3]], vertices: &[[f64; 2]]) {
    for e in elements {
        let mut best = 0usize;
        let mut best_len = f64::NEG_INFINITY;
        let mut best_opp = u32::MAX;
        for j in 0..3 {
            let a = vertices[e[j] as usize];
            let b = vertices[e[(j + 1) % 3] as usize];
            let len2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
            let opp = e[(j + 2) % 3];
            if len2 > best_len || (len2 == best_len && opp < best_opp) {
                best = j;
                best_len = len2;
                best_opp = opp;
            }
        }
        *e = [e[best], e[(best + 1) % 3], e[(best + 2) % 3]];
    }
}
