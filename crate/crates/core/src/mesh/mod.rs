//! Simplicial meshes (triangles in 2D, tetrahedra in 3D) with tagged boundary
//! facets and per-cell region labels, plus generators for the experiment
//! geometries and Gmsh/JSON ingestion.

mod generators;
#[cfg(test)]
mod tests;
mod io;

pub use generators::{
    extrude, extrude_tiered, generate_disc, generate_plate_with_hole, generate_rectangle,
    generate_thermal_footprint,
};
pub use io::{mesh_from_json, mesh_to_json, read_msh, write_msh};

use std::collections::BTreeMap;

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("internal error: {0}")]
    Internal(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Map from integer tags to semantic names. Boundary tags use 1..=99,
/// extrusion-added tags 90..=92, region tags 100 and up.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TagLegend {
    names: BTreeMap<u32, String>,
}

impl TagLegend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, tag: u32, name: &str) -> Result<(), MeshError> {
        if self.names.values().any(|n| n == name) && self.names.get(&tag).map(String::as_str) != Some(name) {
            return Err(MeshError::InvalidArgument(format!("duplicate tag name '{name}'")));
        }
        self.names.insert(tag, name.to_string());
        Ok(())
    }

    pub fn name(&self, tag: u32) -> Option<&str> {
        self.names.get(&tag).map(String::as_str)
    }

    pub fn tag(&self, name: &str) -> Option<u32> {
        self.names.iter().find(|(_, n)| n.as_str() == name).map(|(t, _)| *t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &str)> {
        self.names.iter().map(|(t, n)| (*t, n.as_str()))
    }

    pub fn contains(&self, tag: u32) -> bool {
        self.names.contains_key(&tag)
    }
}

/// Local facets of the reference simplex: facet `k` is opposite vertex `k`,
/// listed in ascending local-vertex order.
pub fn cell_facets(dim: usize) -> &'static [[usize; 3]] {
    match dim {
        2 => &[[1, 2, usize::MAX], [0, 2, usize::MAX], [0, 1, usize::MAX]],
        3 => &[[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]],
        _ => panic!("unsupported dimension {dim}"),
    }
}

/// Immutable simplicial mesh. Cells are consistently oriented (positive signed
/// measure); construction validates indices, boundary facets, and the tag legend.
#[derive(Debug, Clone)]
pub struct Mesh<S> {
    pub dim: usize,
    pub vertices: Vec<[S; 3]>,
    /// Vertex indices per cell; entry 3 is unused in 2D.
    pub cells: Vec<[usize; 4]>,
    /// Boundary facet vertex tuples (entry 2 unused in 2D) with their tag.
    pub boundary_facets: Vec<([usize; 3], u32)>,
    /// Region label per cell.
    pub region_tags: Vec<u32>,
    pub legend: TagLegend,
    /// Characteristic edge length: the longest edge in the mesh.
    pub h: S,
}

impl<S: Scalar> Mesh<S> {
    pub fn new(
        dim: usize,
        vertices: Vec<[S; 3]>,
        mut cells: Vec<[usize; 4]>,
        boundary_facets: Vec<([usize; 3], u32)>,
        region_tags: Vec<u32>,
        legend: TagLegend,
    ) -> Result<Self, MeshError> {
        if dim != 2 && dim != 3 {
            return Err(MeshError::InvalidArgument(format!("dimension must be 2 or 3, got {dim}")));
        }
        if region_tags.len() != cells.len() {
            return Err(MeshError::InvalidArgument("region_tags length must match cell count".into()));
        }
        let nv = vertices.len();
        let k = dim + 1;
        for (ci, cell) in cells.iter_mut().enumerate() {
            for &v in cell.iter().take(k) {
                if v >= nv {
                    return Err(MeshError::InvalidArgument(format!(
                        "cell {ci} references vertex {v} >= vertex count {nv}"
                    )));
                }
            }
            let vol = signed_measure(dim, &vertices, cell);
            if vol == S::zero() {
                return Err(MeshError::Internal(format!("cell {ci} is degenerate (zero measure)")));
            }
            if vol < S::zero() {
                cell.swap(k - 2, k - 1);
            }
        }

        // facet -> incident cell count
        let incidence = facet_incidence_of(dim, &cells);
        for (fi, (verts, tag)) in boundary_facets.iter().enumerate() {
            let key = sorted_facet(dim, verts);
            match incidence.get(&key) {
                Some(cs) if cs.len() == 1 => {}
                Some(cs) => {
                    return Err(MeshError::InvalidArgument(format!(
                        "boundary facet {fi} is shared by {} cells",
                        cs.len()
                    )))
                }
                None => {
                    return Err(MeshError::InvalidArgument(format!(
                        "boundary facet {fi} is not a facet of any cell"
                    )))
                }
            }
            if !legend.contains(*tag) {
                return Err(MeshError::InvalidArgument(format!(
                    "boundary facet {fi} uses tag {tag} missing from the legend"
                )));
            }
        }
        for (ci, tag) in region_tags.iter().enumerate() {
            if !legend.contains(*tag) {
                return Err(MeshError::InvalidArgument(format!(
                    "cell {ci} uses region tag {tag} missing from the legend"
                )));
            }
        }

        let mut h = S::zero();
        for cell in &cells {
            for a in 0..k {
                for b in (a + 1)..k {
                    let d = dist(&vertices[cell[a]], &vertices[cell[b]]);
                    if d > h {
                        h = d;
                    }
                }
            }
        }

        Ok(Self { dim, vertices, cells, boundary_facets, region_tags, legend, h })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// Vertices of one cell (dim + 1 entries).
    pub fn cell_vertices(&self, c: usize) -> &[usize] {
        &self.cells[c][..self.dim + 1]
    }

    /// Positive measure (area/volume) of a cell.
    pub fn cell_measure(&self, c: usize) -> S {
        signed_measure(self.dim, &self.vertices, &self.cells[c]).abs()
    }

    pub fn total_measure(&self) -> S {
        (0..self.n_cells()).fold(S::zero(), |acc, c| acc + self.cell_measure(c))
    }

    /// Map from sorted facet vertices to the cells containing that facet.
    pub fn facet_incidence(&self) -> BTreeMap<[usize; 3], Vec<usize>> {
        facet_incidence_of(self.dim, &self.cells)
    }

    /// Indices of boundary facets carrying `tag`.
    pub fn facets_with_tag(&self, tag: u32) -> Vec<usize> {
        self.boundary_facets
            .iter()
            .enumerate()
            .filter(|(_, (_, t))| *t == tag)
            .map(|(i, _)| i)
            .collect()
    }

    /// Checks that every facet incident to exactly one cell is declared as a
    /// boundary facet (full coverage) and interior facets touch exactly two cells.
    pub fn check_boundary_coverage(&self) -> Result<(), MeshError> {
        let incidence = self.facet_incidence();
        let declared: std::collections::BTreeSet<[usize; 3]> = self
            .boundary_facets
            .iter()
            .map(|(verts, _)| sorted_facet(self.dim, verts))
            .collect();
        for (facet, cells) in &incidence {
            match cells.len() {
                1 => {
                    if !declared.contains(facet) {
                        return Err(MeshError::Internal(format!(
                            "boundary facet {facet:?} is not tagged"
                        )));
                    }
                }
                2 => {}
                n => {
                    return Err(MeshError::Internal(format!(
                        "facet {facet:?} belongs to {n} cells"
                    )))
                }
            }
        }
        Ok(())
    }

    /// Centroid of a cell.
    pub fn cell_centroid(&self, c: usize) -> [S; 3] {
        let k = self.dim + 1;
        let mut out = [S::zero(); 3];
        for &v in self.cell_vertices(c) {
            for (o, x) in out.iter_mut().zip(&self.vertices[v]) {
                *o += *x;
            }
        }
        let inv = S::one() / S::of(k as f64);
        out.iter_mut().for_each(|o| *o *= inv);
        out
    }
}

pub(crate) fn sorted_facet(dim: usize, verts: &[usize; 3]) -> [usize; 3] {
    let mut key = [usize::MAX; 3];
    key[..dim].copy_from_slice(&verts[..dim]);
    key[..dim].sort_unstable();
    key
}

fn facet_incidence_of(dim: usize, cells: &[[usize; 4]]) -> BTreeMap<[usize; 3], Vec<usize>> {
    let mut map: BTreeMap<[usize; 3], Vec<usize>> = BTreeMap::new();
    for (ci, cell) in cells.iter().enumerate() {
        for local in cell_facets(dim) {
            let mut verts = [usize::MAX; 3];
            for (slot, &lv) in verts.iter_mut().zip(local.iter()).take(dim) {
                *slot = cell[lv];
            }
            map.entry(sorted_facet(dim, &verts)).or_default().push(ci);
        }
    }
    map
}

fn dist<S: Scalar>(a: &[S; 3], b: &[S; 3]) -> S {
    let mut acc = S::zero();
    for i in 0..3 {
        let d = a[i] - b[i];
        acc += d * d;
    }
    acc.sqrt()
}

fn signed_measure<S: Scalar>(dim: usize, vertices: &[[S; 3]], cell: &[usize; 4]) -> S {
    let p = |i: usize| &vertices[cell[i]];
    match dim {
        2 => {
            let (a, b, c) = (p(0), p(1), p(2));
            let half = S::of(0.5);
            half * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
        }
        3 => {
            let (a, b, c, d) = (p(0), p(1), p(2), p(3));
            let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
            let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
            let w = [d[0] - a[0], d[1] - a[1], d[2] - a[2]];
            let det = u[0] * (v[1] * w[2] - v[2] * w[1]) - u[1] * (v[0] * w[2] - v[2] * w[0])
                + u[2] * (v[0] * w[1] - v[1] * w[0]);
            det / S::of(6.0)
        }
        _ => panic!("unsupported dimension {dim}"),
    }
}
