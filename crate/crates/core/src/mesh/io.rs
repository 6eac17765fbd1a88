//! Mesh ingestion and dumps: a Gmsh MSH 2.2 ASCII subset (nodes, elements of
//! type 1/2/4, physical tags) and an internal JSON format for fixtures.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Mesh, MeshError, TagLegend};
use crate::scalar::Scalar;

fn parse_err(line: usize, message: impl Into<String>) -> MeshError {
    MeshError::Parse { line, message: message.into() }
}

/// Reads a mesh from a Gmsh MSH 2.2 ASCII file. Supported elements: 2-node
/// lines (boundary facets of 2D meshes), 3-node triangles (cells in 2D,
/// boundary facets in 3D), 4-node tetrahedra. The first element tag is taken
/// as the physical group.
pub fn read_msh<S: Scalar>(path: &std::path::Path) -> Result<Mesh<S>, MeshError> {
    let text = std::fs::read_to_string(path)?;
    read_msh_str(&text)
}

pub(crate) fn read_msh_str<S: Scalar>(text: &str) -> Result<Mesh<S>, MeshError> {
    let lines: Vec<&str> = text.lines().collect();
    let mut i = 0usize;
    let mut node_ids: Vec<u64> = Vec::new();
    let mut coords: Vec<[f64; 3]> = Vec::new();
    let mut physical_names: BTreeMap<(u32, u32), String> = BTreeMap::new();
    // (type, physical, node ids, line)
    let mut elements: Vec<(u32, u32, Vec<u64>, usize)> = Vec::new();

    while i < lines.len() {
        let line = lines[i].trim();
        match line {
            "$MeshFormat" => {
                let fmt = lines.get(i + 1).ok_or_else(|| parse_err(i + 2, "truncated $MeshFormat"))?;
                let mut it = fmt.split_whitespace();
                let version = it.next().unwrap_or("");
                if !version.starts_with("2.2") {
                    return Err(parse_err(i + 2, format!("unsupported MSH version '{version}', expected 2.2")));
                }
                i += 3;
            }
            "$PhysicalNames" => {
                let count: usize = lines
                    .get(i + 1)
                    .and_then(|l| l.trim().parse().ok())
                    .ok_or_else(|| parse_err(i + 2, "bad $PhysicalNames count"))?;
                for k in 0..count {
                    let l = lines.get(i + 2 + k).ok_or_else(|| parse_err(i + 3 + k, "truncated $PhysicalNames"))?;
                    let mut it = l.split_whitespace();
                    let dim: u32 = it.next().and_then(|t| t.parse().ok()).ok_or_else(|| parse_err(i + 3 + k, "bad dim"))?;
                    let tag: u32 = it.next().and_then(|t| t.parse().ok()).ok_or_else(|| parse_err(i + 3 + k, "bad tag"))?;
                    let name = l.splitn(3, char::is_whitespace).nth(2).unwrap_or("").trim().trim_matches('"');
                    physical_names.insert((dim, tag), name.to_string());
                }
                i += count + 3;
            }
            "$Nodes" => {
                let count: usize = lines
                    .get(i + 1)
                    .and_then(|l| l.trim().parse().ok())
                    .ok_or_else(|| parse_err(i + 2, "bad $Nodes count"))?;
                for k in 0..count {
                    let ln = i + 2 + k;
                    let l = lines.get(ln).ok_or_else(|| parse_err(ln + 1, "truncated $Nodes"))?;
                    let mut it = l.split_whitespace();
                    let id: u64 = it.next().and_then(|t| t.parse().ok()).ok_or_else(|| parse_err(ln + 1, "bad node id"))?;
                    let mut xyz = [0.0f64; 3];
                    for x in &mut xyz {
                        *x = it
                            .next()
                            .and_then(|t| t.parse().ok())
                            .ok_or_else(|| parse_err(ln + 1, "bad node coordinate"))?;
                    }
                    node_ids.push(id);
                    coords.push(xyz);
                }
                i += count + 3;
            }
            "$Elements" => {
                let count: usize = lines
                    .get(i + 1)
                    .and_then(|l| l.trim().parse().ok())
                    .ok_or_else(|| parse_err(i + 2, "bad $Elements count"))?;
                for k in 0..count {
                    let ln = i + 2 + k;
                    let l = lines.get(ln).ok_or_else(|| parse_err(ln + 1, "truncated $Elements"))?;
                    let mut it = l.split_whitespace();
                    let _id: u64 = it.next().and_then(|t| t.parse().ok()).ok_or_else(|| parse_err(ln + 1, "bad element id"))?;
                    let ty: u32 = it.next().and_then(|t| t.parse().ok()).ok_or_else(|| parse_err(ln + 1, "bad element type"))?;
                    let n_nodes = match ty {
                        1 => 2,
                        2 => 3,
                        4 => 4,
                        other => return Err(parse_err(ln + 1, format!("unsupported element type {other}"))),
                    };
                    let ntags: usize = it.next().and_then(|t| t.parse().ok()).ok_or_else(|| parse_err(ln + 1, "bad tag count"))?;
                    let mut physical = 0u32;
                    for t in 0..ntags {
                        let tag: i64 = it.next().and_then(|s| s.parse().ok()).ok_or_else(|| parse_err(ln + 1, "bad tag"))?;
                        if t == 0 {
                            physical = tag.max(0) as u32;
                        }
                    }
                    let mut nodes = Vec::with_capacity(n_nodes);
                    for _ in 0..n_nodes {
                        nodes.push(
                            it.next()
                                .and_then(|s| s.parse().ok())
                                .ok_or_else(|| parse_err(ln + 1, "missing element node"))?,
                        );
                    }
                    elements.push((ty, physical, nodes, ln + 1));
                }
                i += count + 3;
            }
            _ => {
                i += 1;
            }
        }
    }

    if coords.is_empty() {
        return Err(parse_err(0, "no $Nodes section"));
    }
    let id_map: BTreeMap<u64, usize> = node_ids.iter().enumerate().map(|(k, &id)| (id, k)).collect();
    let lookup = |id: u64, line: usize| -> Result<usize, MeshError> {
        id_map.get(&id).copied().ok_or_else(|| parse_err(line, format!("unknown node id {id}")))
    };

    let has_tets = elements.iter().any(|(ty, ..)| *ty == 4);
    let dim = if has_tets { 3 } else { 2 };
    let mut cells = Vec::new();
    let mut region_phys = Vec::new();
    let mut boundary = Vec::new();
    for (ty, phys, nodes, line) in &elements {
        match (dim, ty) {
            (2, 2) | (3, 4) => {
                let mut cell = [usize::MAX; 4];
                for (slot, id) in cell.iter_mut().zip(nodes) {
                    *slot = lookup(*id, *line)?;
                }
                cells.push(cell);
                region_phys.push(*phys);
            }
            (2, 1) | (3, 2) => {
                let mut facet = [usize::MAX; 3];
                for (slot, id) in facet.iter_mut().zip(nodes) {
                    *slot = lookup(*id, *line)?;
                }
                boundary.push((facet, *phys));
            }
            (3, 1) => return Err(parse_err(*line, "unsupported element type 1 in a tetrahedral mesh")),
            _ => unreachable!(),
        }
    }
    if cells.is_empty() {
        return Err(parse_err(0, "no cells in $Elements"));
    }

    // physical groups: boundary tags keep their number; region tags are moved
    // into the 100+ range preserving order of first appearance
    let mut region_map: BTreeMap<u32, u32> = BTreeMap::new();
    for p in &region_phys {
        let next = 100 + region_map.len() as u32;
        region_map.entry(*p).or_insert(next);
    }
    let region_tags: Vec<u32> = region_phys.iter().map(|p| region_map[p]).collect();
    let mut legend = TagLegend::new();
    for (facet_phys, _) in boundary.iter().map(|(f, t)| (*t, f)) {
        if !legend.contains(facet_phys) {
            let name = physical_names
                .get(&(dim as u32 - 1, facet_phys))
                .cloned()
                .unwrap_or_else(|| format!("boundary_{facet_phys}"));
            legend.insert(facet_phys, &name)?;
        }
    }
    for (phys, tag) in &region_map {
        let name = physical_names
            .get(&(dim as u32, *phys))
            .cloned()
            .unwrap_or_else(|| format!("region_{phys}"));
        legend.insert(*tag, &name)?;
    }

    let vertices: Vec<[S; 3]> = coords.iter().map(|c| [S::of(c[0]), S::of(c[1]), S::of(c[2])]).collect();
    Mesh::new(dim, vertices, cells, boundary, region_tags, legend)
}

/// Writes the mesh as Gmsh MSH 2.2 ASCII, boundary facets first, then cells.
pub fn write_msh<S: Scalar>(mesh: &Mesh<S>, path: &std::path::Path) -> Result<(), MeshError> {
    use std::fmt::Write as _;
    let mut out = String::new();
    out.push_str("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n");

    let mut phys: Vec<(u32, u32, String)> = Vec::new();
    let mut seen_boundary = std::collections::BTreeSet::new();
    for (_, tag) in &mesh.boundary_facets {
        if seen_boundary.insert(*tag) {
            let name = mesh.legend.name(*tag).unwrap_or("untitled");
            phys.push((mesh.dim as u32 - 1, *tag, name.to_string()));
        }
    }
    let mut seen_region = std::collections::BTreeSet::new();
    for tag in &mesh.region_tags {
        if seen_region.insert(*tag) {
            let name = mesh.legend.name(*tag).unwrap_or("untitled");
            phys.push((mesh.dim as u32, *tag, name.to_string()));
        }
    }
    writeln!(out, "$PhysicalNames\n{}", phys.len()).unwrap();
    for (dim, tag, name) in &phys {
        writeln!(out, "{dim} {tag} \"{name}\"").unwrap();
    }
    out.push_str("$EndPhysicalNames\n");

    writeln!(out, "$Nodes\n{}", mesh.n_vertices()).unwrap();
    for (k, v) in mesh.vertices.iter().enumerate() {
        writeln!(out, "{} {} {} {}", k + 1, v[0].as_f64(), v[1].as_f64(), v[2].as_f64()).unwrap();
    }
    out.push_str("$EndNodes\n");

    writeln!(out, "$Elements\n{}", mesh.boundary_facets.len() + mesh.n_cells()).unwrap();
    let mut eid = 1usize;
    let facet_type = if mesh.dim == 2 { 1 } else { 2 };
    for (verts, tag) in &mesh.boundary_facets {
        write!(out, "{eid} {facet_type} 2 {tag} {tag}").unwrap();
        for &v in verts.iter().take(mesh.dim) {
            write!(out, " {}", v + 1).unwrap();
        }
        out.push('\n');
        eid += 1;
    }
    let cell_type = if mesh.dim == 2 { 2 } else { 4 };
    for (ci, cell) in mesh.cells.iter().enumerate() {
        write!(out, "{eid} {cell_type} 2 {} {}", mesh.region_tags[ci], mesh.region_tags[ci]).unwrap();
        for &v in cell.iter().take(mesh.dim + 1) {
            write!(out, " {}", v + 1).unwrap();
        }
        out.push('\n');
        eid += 1;
    }
    out.push_str("$EndElements\n");
    std::fs::write(path, out)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct MeshJson {
    schema_version: u32,
    dim: usize,
    vertices: Vec<[f64; 3]>,
    cells: Vec<Vec<usize>>,
    boundary_facets: Vec<(Vec<usize>, u32)>,
    region_tags: Vec<u32>,
    legend: BTreeMap<u32, String>,
}

/// Serializes the mesh to the internal JSON fixture format.
pub fn mesh_to_json<S: Scalar>(mesh: &Mesh<S>) -> String {
    let json = MeshJson {
        schema_version: 1,
        dim: mesh.dim,
        vertices: mesh.vertices.iter().map(|v| [v[0].as_f64(), v[1].as_f64(), v[2].as_f64()]).collect(),
        cells: mesh.cells.iter().map(|c| c[..mesh.dim + 1].to_vec()).collect(),
        boundary_facets: mesh
            .boundary_facets
            .iter()
            .map(|(f, t)| (f[..mesh.dim].to_vec(), *t))
            .collect(),
        region_tags: mesh.region_tags.clone(),
        legend: mesh.legend.iter().map(|(t, n)| (t, n.to_string())).collect(),
    };
    serde_json::to_string_pretty(&json).expect("mesh serialization")
}

/// Reads a mesh from the internal JSON fixture format.
pub fn mesh_from_json<S: Scalar>(text: &str) -> Result<Mesh<S>, MeshError> {
    let json: MeshJson =
        serde_json::from_str(text).map_err(|e| MeshError::Parse { line: e.line(), message: e.to_string() })?;
    if json.schema_version != 1 {
        return Err(MeshError::InvalidArgument(format!(
            "unsupported mesh schema version {}",
            json.schema_version
        )));
    }
    let vertices = json.vertices.iter().map(|v| [S::of(v[0]), S::of(v[1]), S::of(v[2])]).collect();
    let mut cells = Vec::with_capacity(json.cells.len());
    for c in &json.cells {
        if c.len() != json.dim + 1 {
            return Err(MeshError::InvalidArgument("cell arity does not match dimension".into()));
        }
        let mut cell = [usize::MAX; 4];
        cell[..c.len()].copy_from_slice(c);
        cells.push(cell);
    }
    let mut boundary = Vec::with_capacity(json.boundary_facets.len());
    for (f, t) in &json.boundary_facets {
        if f.len() != json.dim {
            return Err(MeshError::InvalidArgument("facet arity does not match dimension".into()));
        }
        let mut facet = [usize::MAX; 3];
        facet[..f.len()].copy_from_slice(f);
        boundary.push((facet, *t));
    }
    let mut legend = TagLegend::new();
    for (tag, name) in &json.legend {
        legend.insert(*tag, name)?;
    }
    Mesh::new(json.dim, vertices, cells, boundary, json.region_tags, legend)
}
