//! Output artifacts: legacy VTK ASCII field snapshots, flat CSV point series,
//! and run manifests.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::fespace::FEFunction;
use crate::mesh::Mesh;
use crate::scalar::Scalar;

/// Writes an unstructured-grid legacy VTK file with per-vertex point data.
/// Fields are sampled at mesh vertices (the vertex DoFs of Lagrange spaces).
pub fn write_vtk<S: Scalar>(
    path: &Path,
    mesh: &Mesh<S>,
    fields: &[(&str, &FEFunction<S>)],
    extra_point_data: &[(&str, &[f64])],
) -> std::io::Result<()> {
    use std::fmt::Write as _;
    let nv = mesh.n_vertices();
    let nc = mesh.n_cells();
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\nfield snapshot\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    writeln!(out, "POINTS {nv} double").unwrap();
    for v in &mesh.vertices {
        writeln!(out, "{} {} {}", v[0].as_f64(), v[1].as_f64(), v[2].as_f64()).unwrap();
    }
    let k = mesh.dim + 1;
    writeln!(out, "CELLS {nc} {}", nc * (k + 1)).unwrap();
    for c in 0..nc {
        write!(out, "{k}").unwrap();
        for &v in mesh.cell_vertices(c) {
            write!(out, " {v}").unwrap();
        }
        out.push('\n');
    }
    writeln!(out, "CELL_TYPES {nc}").unwrap();
    let vtk_type = if mesh.dim == 2 { 5 } else { 10 };
    for _ in 0..nc {
        writeln!(out, "{vtk_type}").unwrap();
    }
    writeln!(out, "POINT_DATA {nv}").unwrap();
    for (name, f) in fields {
        let comps = f.space.components;
        if comps == 1 {
            writeln!(out, "SCALARS {name} double 1\nLOOKUP_TABLE default").unwrap();
            for v in 0..nv {
                writeln!(out, "{}", f.dofs[f.space.dof(v, 0)].as_f64()).unwrap();
            }
        } else {
            writeln!(out, "VECTORS {name} double").unwrap();
            for v in 0..nv {
                let mut comps3 = [0.0f64; 3];
                for c in 0..comps {
                    comps3[c] = f.dofs[f.space.dof(v, c)].as_f64();
                }
                writeln!(out, "{} {} {}", comps3[0], comps3[1], comps3[2]).unwrap();
            }
        }
    }
    for (name, data) in extra_point_data {
        assert_eq!(data.len(), nv, "extra point data must be per-vertex");
        writeln!(out, "SCALARS {name} double 1\nLOOKUP_TABLE default").unwrap();
        for v in data.iter() {
            writeln!(out, "{v}").unwrap();
        }
    }
    std::fs::write(path, out)
}

/// Writes a flat CSV: header row then one row per record.
pub fn write_csv(path: &Path, header: &str, rows: &[Vec<f64>]) -> std::io::Result<()> {
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)
}

/// Point-value dump of a finite element function at its vertices.
pub fn write_field_csv<S: Scalar>(path: &Path, f: &FEFunction<S>) -> std::io::Result<()> {
    let mesh = &f.space.mesh;
    let comps = f.space.components;
    let mut header = String::from("x,y,z");
    for c in 0..comps {
        header.push_str(&format!(",v{c}"));
    }
    let mut rows = Vec::with_capacity(mesh.n_vertices());
    for v in 0..mesh.n_vertices() {
        let mut row = vec![
            mesh.vertices[v][0].as_f64(),
            mesh.vertices[v][1].as_f64(),
            mesh.vertices[v][2].as_f64(),
        ];
        for c in 0..comps {
            row.push(f.dofs[f.space.dof(v, c)].as_f64());
        }
        rows.push(row);
    }
    write_csv(path, &header, &rows)
}

/// Manifest of one command run: configuration hash, seed, outputs, timings.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub tool_version: String,
    pub outputs: Vec<String>,
    pub timings_ms: BTreeMap<String, u128>,
}

impl RunManifest {
    pub fn new(command: &str, config_hash: &str, seed: u64) -> Self {
        Self {
            schema_version: 1,
            command: command.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: Vec::new(),
            timings_ms: BTreeMap::new(),
        }
    }

    pub fn add_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn add_timing(&mut self, label: &str, ms: u128) {
        self.timings_ms.insert(label.to_string(), ms);
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).expect("serialize manifest"))
    }
}
