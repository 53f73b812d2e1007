//! Plain-text mesh files.
//!
//! Format: a header line `d=2 nv=<int> ne=<int> level=<int>`, then `nv` vertex
//! lines `x y boundary_flag`, then `ne` element lines `v0 v1 v2 ref_edge
//! parent` where `ref_edge` in `{0,1,2}` selects the edge `(v_r, v_{r+1 mod
//! 3})` and `parent` is the element's parent index in the preceding mesh of
//! its hierarchy. The loader rotates each triple so the reference edge comes
//! first; the writer always emits `0` because triples are normalised
//! internally. `level=` and the `parent` column are optional on input
//! (defaulting to 0 and the identity) so hand-written standalone meshes stay
//! simple, but a stored hierarchy needs them for nested-space embeddings.
//! Coordinates are written in shortest round-trip decimal form, so write/read
//! is bit-exact.

use super::{MeshError, Triangulation};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

impl Triangulation {
    /// Writes the mesh in the plain-text format.
    pub fn write_text<W: Write>(&self, writer: W) -> Result<(), MeshError> {
        let mut w = BufWriter::new(writer);
        writeln!(
            w,
            "d=2 nv={} ne={} level={}",
            self.num_vertices(),
            self.num_elements(),
            self.level
        )?;
        for (v, flag) in self.vertices.iter().zip(&self.boundary_vertex) {
            writeln!(w, "{} {} {}", v[0], v[1], u8::from(*flag))?;
        }
        for (e, p) in self.elements.iter().zip(&self.parent) {
            writeln!(w, "{} {} {} 0 {}", e[0], e[1], e[2], p)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes the mesh to a file path.
    pub fn write_file<P: AsRef<Path>>(&self, path: P) -> Result<(), MeshError> {
        let file = std::fs::File::create(path)?;
        self.write_text(file)
    }

    /// Reads a mesh in the plain-text format, validating conformity,
    /// orientation, and boundary flags.
    pub fn read_text<R: Read>(reader: R) -> Result<Self, MeshError> {
        let mut lines = BufReader::new(reader).lines();
        let header = lines
            .next()
            .ok_or_else(|| MeshError::Parse("empty file".into()))??;
        let mut nv: Option<usize> = None;
        let mut ne: Option<usize> = None;
        let mut level: u32 = 0;
        let mut saw_dim = false;
        for field in header.split_whitespace() {
            if let Some(rest) = field.strip_prefix("d=") {
                if rest != "2" {
                    return Err(MeshError::Parse(format!("unsupported dimension {rest}")));
                }
                saw_dim = true;
            } else if let Some(rest) = field.strip_prefix("nv=") {
                nv = Some(parse_num(rest, "nv")?);
            } else if let Some(rest) = field.strip_prefix("ne=") {
                ne = Some(parse_num(rest, "ne")?);
            } else if let Some(rest) = field.strip_prefix("level=") {
                level = parse_num(rest, "level")?;
            } else {
                return Err(MeshError::Parse(format!("unexpected header field {field}")));
            }
        }
        if !saw_dim {
            return Err(MeshError::Parse("header missing d=2".into()));
        }
        let nv = nv.ok_or_else(|| MeshError::Parse("header missing nv".into()))?;
        let ne = ne.ok_or_else(|| MeshError::Parse("header missing ne".into()))?;

        let mut vertices = Vec::with_capacity(nv);
        let mut flags = Vec::with_capacity(nv);
        for i in 0..nv {
            let line = lines
                .next()
                .ok_or_else(|| MeshError::Parse(format!("missing vertex line {i}")))??;
            let mut it = line.split_whitespace();
            let x: f64 = parse_num(
                it.next()
                    .ok_or_else(|| MeshError::Parse(format!("vertex {i}: missing x")))?,
                "x",
            )?;
            let y: f64 = parse_num(
                it.next()
                    .ok_or_else(|| MeshError::Parse(format!("vertex {i}: missing y")))?,
                "y",
            )?;
            let flag: u8 = parse_num(
                it.next()
                    .ok_or_else(|| MeshError::Parse(format!("vertex {i}: missing flag")))?,
                "boundary flag",
            )?;
            if it.next().is_some() {
                return Err(MeshError::Parse(format!("vertex {i}: trailing fields")));
            }
            vertices.push([x, y]);
            flags.push(flag != 0);
        }
        let mut elements = Vec::with_capacity(ne);
        let mut parents: Option<Vec<u32>> = None;
        for i in 0..ne {
            let line = lines
                .next()
                .ok_or_else(|| MeshError::Parse(format!("missing element line {i}")))??;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 && fields.len() != 5 {
                return Err(MeshError::Parse(format!(
                    "element {i}: expected 4 or 5 fields, got {}",
                    fields.len()
                )));
            }
            let v: [u32; 3] = [
                parse_num(fields[0], "v0")?,
                parse_num(fields[1], "v1")?,
                parse_num(fields[2], "v2")?,
            ];
            let r: usize = parse_num(fields[3], "ref_edge")?;
            if r > 2 {
                return Err(MeshError::Parse(format!(
                    "element {i}: ref_edge {r} not in 0..=2"
                )));
            }
            match (fields.get(4), &mut parents) {
                (Some(p), Some(list)) => list.push(parse_num(p, "parent")?),
                (Some(p), slot @ None) if i == 0 => {
                    *slot = Some(vec![parse_num(p, "parent")?]);
                }
                (None, None) => {}
                _ => {
                    return Err(MeshError::Parse(format!(
                        "element {i}: parent column must be present on all lines or none"
                    )));
                }
            }
            // Rotate so the reference edge becomes (v[0], v[1]).
            elements.push([v[r], v[(r + 1) % 3], v[(r + 2) % 3]]);
        }
        let mut mesh = Triangulation::from_parts(vertices, elements)?;
        if let Some(parents) = parents {
            mesh.parent = parents;
        }
        mesh.level = level;
        for (i, stored) in flags.iter().enumerate() {
            if *stored != mesh.boundary_vertex[i] {
                return Err(MeshError::BoundaryFlagMismatch(i));
            }
        }
        Ok(mesh)
    }

    /// Reads a mesh from a file path.
    pub fn read_file<P: AsRef<Path>>(path: P) -> Result<Self, MeshError> {
        let file = std::fs::File::open(path)?;
        Self::read_text(file)
    }
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, MeshError> {
    s.parse()
        .map_err(|_| MeshError::Parse(format!("cannot parse {what} from {s:?}")))
}
