//! Mesh generators for the experiment geometries: structured rectangles,
//! concentric-ring discs, plates with a polygonal hole, the two-region thermal
//! footprint, and prism-to-tetrahedra extrusion.

use std::collections::BTreeMap;

use super::{Mesh, MeshError, TagLegend};
use crate::scalar::Scalar;

pub const TAG_Z_MIN: u32 = 90;
pub const TAG_Z_MAX: u32 = 91;
pub const TAG_STEP: u32 = 92;
pub const TAG_REGION: u32 = 100;

fn cell2(a: usize, b: usize, c: usize) -> [usize; 4] {
    [a, b, c, usize::MAX]
}

fn facet2(a: usize, b: usize) -> [usize; 3] {
    [a, b, usize::MAX]
}

/// Structured rectangle `[0, width] x [0, height]`, each grid quad split along
/// its diagonal into two triangles. Tags: bottom=1, top=2, left=3, right=4.
pub fn generate_rectangle<S: Scalar>(width: f64, height: f64, nx: usize, ny: usize) -> Result<Mesh<S>, MeshError> {
    if width <= 0.0 || height <= 0.0 {
        return Err(MeshError::InvalidArgument(format!(
            "rectangle dimensions must be positive, got {width} x {height}"
        )));
    }
    if nx < 1 || ny < 1 {
        return Err(MeshError::InvalidArgument(format!("subdivisions must be >= 1, got {nx} x {ny}")));
    }
    let vid = |i: usize, j: usize| j * (nx + 1) + i;
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push([
                S::of(width * i as f64 / nx as f64),
                S::of(height * j as f64 / ny as f64),
                S::zero(),
            ]);
        }
    }
    let mut cells = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (v00, v10) = (vid(i, j), vid(i + 1, j));
            let (v01, v11) = (vid(i, j + 1), vid(i + 1, j + 1));
            cells.push(cell2(v00, v10, v11));
            cells.push(cell2(v00, v11, v01));
        }
    }
    let mut boundary = Vec::new();
    for i in 0..nx {
        boundary.push((facet2(vid(i, 0), vid(i + 1, 0)), 1));
        boundary.push((facet2(vid(i, ny), vid(i + 1, ny)), 2));
    }
    for j in 0..ny {
        boundary.push((facet2(vid(0, j), vid(0, j + 1)), 3));
        boundary.push((facet2(vid(nx, j), vid(nx, j + 1)), 4));
    }
    let mut legend = TagLegend::new();
    legend.insert(1, "bottom")?;
    legend.insert(2, "top")?;
    legend.insert(3, "left")?;
    legend.insert(4, "right")?;
    legend.insert(TAG_REGION, "domain")?;
    let regions = vec![TAG_REGION; cells.len()];
    Mesh::new(2, vertices, cells, boundary, regions, legend)
}

/// Disc of the given diameter centered at the origin, triangulated by
/// concentric rings (ring `i` carries `6 i` vertices). Boundary facets are
/// tagged `top_arc`=2 / `bottom_arc`=1 when their midpoint angle lies within
/// `arc_half_angle_deg` of 90 / 270 degrees, otherwise `free`=3.
pub fn generate_disc<S: Scalar>(diameter: f64, rings: usize, arc_half_angle_deg: f64) -> Result<Mesh<S>, MeshError> {
    if diameter <= 0.0 {
        return Err(MeshError::InvalidArgument(format!("diameter must be positive, got {diameter}")));
    }
    if rings < 1 {
        return Err(MeshError::InvalidArgument("rings must be >= 1".into()));
    }
    let radius = diameter / 2.0;
    let ring_start = |i: usize| 1 + 3 * i * (i - 1);
    let mut vertices = vec![[S::zero(), S::zero(), S::zero()]];
    for i in 1..=rings {
        let r = radius * i as f64 / rings as f64;
        let count = 6 * i;
        for k in 0..count {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
            vertices.push([S::of(r * theta.cos()), S::of(r * theta.sin()), S::zero()]);
        }
    }
    let mut cells = Vec::with_capacity(6 * rings * rings);
    for i in 1..=rings {
        let outer = ring_start(i);
        let n_outer = 6 * i;
        for s in 0..6 {
            let o = |t: usize| outer + (s * i + t) % n_outer;
            if i == 1 {
                cells.push(cell2(o(0), o(1), 0));
            } else {
                let inner = ring_start(i - 1);
                let n_inner = 6 * (i - 1);
                let inn = |t: usize| inner + (s * (i - 1) + t) % n_inner;
                for t in 0..(i - 1) {
                    cells.push(cell2(o(t), o(t + 1), inn(t)));
                    cells.push(cell2(o(t + 1), inn(t + 1), inn(t)));
                }
                cells.push(cell2(o(i - 1), o(i), inn(i - 1)));
            }
        }
    }
    let mut boundary = Vec::new();
    let outer = ring_start(rings);
    let n_outer = 6 * rings;
    for k in 0..n_outer {
        let a = outer + k;
        let b = outer + (k + 1) % n_outer;
        let mid_angle = {
            let ax = vertices[a][0].as_f64() + vertices[b][0].as_f64();
            let ay = vertices[a][1].as_f64() + vertices[b][1].as_f64();
            let mut deg = ay.atan2(ax).to_degrees();
            if deg < 0.0 {
                deg += 360.0;
            }
            deg
        };
        let circ_dist = |t: f64| {
            let d = (mid_angle - t).abs();
            d.min(360.0 - d)
        };
        let tag = if circ_dist(90.0) <= arc_half_angle_deg {
            2
        } else if circ_dist(270.0) <= arc_half_angle_deg {
            1
        } else {
            3
        };
        boundary.push((facet2(a, b), tag));
    }
    let mut legend = TagLegend::new();
    legend.insert(1, "bottom_arc")?;
    legend.insert(2, "top_arc")?;
    legend.insert(3, "free")?;
    legend.insert(TAG_REGION, "domain")?;
    let regions = vec![TAG_REGION; cells.len()];
    Mesh::new(2, vertices, cells, boundary, regions, legend)
}

/// Ray-grid footprint of a `width x height` plate with a centered polygonal
/// hole of `8 * resolution` segments. Tags: bottom=1, top=2, side=3, hole=4.
pub fn generate_plate_with_hole<S: Scalar>(
    width: f64,
    height: f64,
    hole_diameter: f64,
    resolution: usize,
) -> Result<Mesh<S>, MeshError> {
    if width <= 0.0 || height <= 0.0 || hole_diameter <= 0.0 {
        return Err(MeshError::InvalidArgument("dimensions must be positive".into()));
    }
    if resolution < 1 {
        return Err(MeshError::InvalidArgument("resolution must be >= 1".into()));
    }
    let r = hole_diameter / 2.0;
    if r >= width / 2.0 || r >= height / 2.0 {
        return Err(MeshError::InvalidArgument(format!(
            "hole (diameter {hole_diameter}) does not fit strictly inside the {width} x {height} plate"
        )));
    }
    let (cx, cy) = (width / 2.0, height / 2.0);
    let tau = 2.0 * std::f64::consts::PI;

    // ray directions: hole polygon vertices plus the four plate corners
    let mut angles: Vec<f64> = (0..8 * resolution).map(|k| tau * k as f64 / (8 * resolution) as f64).collect();
    for (x, y) in [(width, height), (0.0, height), (0.0, 0.0), (width, 0.0)] {
        let mut a = (y - cy).atan2(x - cx);
        if a < 0.0 {
            a += tau;
        }
        angles.push(a);
    }
    angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    angles.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    let m = angles.len();

    // rectangle-boundary hit of the ray from the center at angle theta
    let outer_point = |theta: f64| -> (f64, f64) {
        let (dx, dy) = (theta.cos(), theta.sin());
        let mut t = f64::INFINITY;
        if dx.abs() > 1e-15 {
            t = t.min((width / 2.0) / dx.abs());
        }
        if dy.abs() > 1e-15 {
            t = t.min((height / 2.0) / dy.abs());
        }
        (cx + t * dx, cy + t * dy)
    };

    let layers = 2 * resolution;
    let vid = |j: usize, l: usize| l * m + j;
    let mut vertices = Vec::with_capacity(m * (layers + 1));
    for l in 0..=layers {
        let frac = l as f64 / layers as f64;
        for &theta in &angles {
            let (hx, hy) = (cx + r * theta.cos(), cy + r * theta.sin());
            let (ox, oy) = outer_point(theta);
            vertices.push([S::of(hx + (ox - hx) * frac), S::of(hy + (oy - hy) * frac), S::zero()]);
        }
    }
    let mut cells = Vec::with_capacity(2 * m * layers);
    for l in 0..layers {
        for j in 0..m {
            let jn = (j + 1) % m;
            cells.push(cell2(vid(j, l), vid(jn, l), vid(jn, l + 1)));
            cells.push(cell2(vid(j, l), vid(jn, l + 1), vid(j, l + 1)));
        }
    }
    let mut boundary = Vec::new();
    for j in 0..m {
        let jn = (j + 1) % m;
        boundary.push((facet2(vid(j, 0), vid(jn, 0)), 4));
        let (a, b) = (vid(j, layers), vid(jn, layers));
        let eps = 1e-9 * height.max(width);
        let on = |v: usize, f: &dyn Fn(f64, f64) -> f64| f(vertices[v][0].as_f64(), vertices[v][1].as_f64()).abs() < eps;
        let tag = if on(a, &|_, y| y) && on(b, &|_, y| y) {
            1
        } else if on(a, &|_, y| y - height) && on(b, &|_, y| y - height) {
            2
        } else {
            3
        };
        boundary.push((facet2(a, b), tag));
    }
    let mut legend = TagLegend::new();
    legend.insert(1, "bottom")?;
    legend.insert(2, "top")?;
    legend.insert(3, "side")?;
    legend.insert(4, "hole")?;
    legend.insert(TAG_REGION, "domain")?;
    let regions = vec![TAG_REGION; cells.len()];
    Mesh::new(2, vertices, cells, boundary, regions, legend)
}

/// Conforming two-region footprint for the thermal assembly: a centered square
/// sample inside a disc, the remainder tagged copper. The square boundary is
/// the shared interface. Outer circle facets within `arc_half_angle_deg` of 180
/// degrees are tagged `left_arc`=1, the rest `free`=2. Regions: copper=100,
/// sample=101.
pub fn generate_thermal_footprint<S: Scalar>(
    disc_diameter: f64,
    hole_diameter: f64,
    square_edge: f64,
    resolution: usize,
    arc_half_angle_deg: f64,
) -> Result<Mesh<S>, MeshError> {
    if disc_diameter <= 0.0 || hole_diameter <= 0.0 || square_edge <= 0.0 {
        return Err(MeshError::InvalidArgument("dimensions must be positive".into()));
    }
    if resolution < 1 {
        return Err(MeshError::InvalidArgument("resolution must be >= 1".into()));
    }
    if square_edge < hole_diameter {
        return Err(MeshError::InvalidArgument(format!(
            "square (edge {square_edge}) smaller than hole (diameter {hole_diameter}): hole not covered"
        )));
    }
    let radius = disc_diameter / 2.0;
    let half = square_edge / 2.0;
    if half * std::f64::consts::SQRT_2 >= radius {
        return Err(MeshError::InvalidArgument(format!(
            "square (edge {square_edge}) does not fit strictly inside the disc (diameter {disc_diameter})"
        )));
    }

    let ns = 4 * resolution;
    let gid = |i: usize, j: usize| j * (ns + 1) + i;
    let mut vertices = Vec::new();
    for j in 0..=ns {
        for i in 0..=ns {
            vertices.push([
                S::of(-half + square_edge * i as f64 / ns as f64),
                S::of(-half + square_edge * j as f64 / ns as f64),
                S::zero(),
            ]);
        }
    }
    let mut cells = Vec::new();
    let mut regions = Vec::new();
    for j in 0..ns {
        for i in 0..ns {
            cells.push(cell2(gid(i, j), gid(i + 1, j), gid(i + 1, j + 1)));
            cells.push(cell2(gid(i, j), gid(i + 1, j + 1), gid(i, j + 1)));
            regions.push(101);
            regions.push(101);
        }
    }

    // square boundary ring, counter-clockwise from the bottom-left corner
    let mut ring = Vec::with_capacity(4 * ns);
    for i in 0..ns {
        ring.push(gid(i, 0));
    }
    for j in 0..ns {
        ring.push(gid(ns, j));
    }
    for i in 0..ns {
        ring.push(gid(ns - i, ns));
    }
    for j in 0..ns {
        ring.push(gid(0, ns - j));
    }
    let nr_ring = ring.len();

    // annulus layers from square ring to circle, radially aligned per ring vertex
    let nl = resolution.max(2);
    let mut layer_ids: Vec<Vec<usize>> = vec![ring.clone()];
    for l in 1..=nl {
        let mut ids = Vec::with_capacity(nr_ring);
        for &v in &ring {
            let (px, py) = (vertices[v][0].as_f64(), vertices[v][1].as_f64());
            let theta = py.atan2(px);
            let (qx, qy) = (radius * theta.cos(), radius * theta.sin());
            let frac = l as f64 / nl as f64;
            ids.push(vertices.len());
            vertices.push([S::of(px + (qx - px) * frac), S::of(py + (qy - py) * frac), S::zero()]);
        }
        layer_ids.push(ids);
    }
    for l in 0..nl {
        for j in 0..nr_ring {
            let jn = (j + 1) % nr_ring;
            cells.push(cell2(layer_ids[l][j], layer_ids[l][jn], layer_ids[l + 1][jn]));
            cells.push(cell2(layer_ids[l][j], layer_ids[l + 1][jn], layer_ids[l + 1][j]));
            regions.push(100);
            regions.push(100);
        }
    }

    let mut boundary = Vec::new();
    for j in 0..nr_ring {
        let jn = (j + 1) % nr_ring;
        let (a, b) = (layer_ids[nl][j], layer_ids[nl][jn]);
        let mut deg = (vertices[a][1].as_f64() + vertices[b][1].as_f64())
            .atan2(vertices[a][0].as_f64() + vertices[b][0].as_f64())
            .to_degrees();
        if deg < 0.0 {
            deg += 360.0;
        }
        let d = (deg - 180.0).abs();
        let tag = if d.min(360.0 - d) <= arc_half_angle_deg { 1 } else { 2 };
        boundary.push((facet2(a, b), tag));
    }
    let mut legend = TagLegend::new();
    legend.insert(1, "left_arc")?;
    legend.insert(2, "free")?;
    legend.insert(100, "copper")?;
    legend.insert(101, "sample")?;
    Mesh::new(2, vertices, cells, boundary, regions, legend)
}

/// Extrudes a 2D mesh along z into `layers` uniform layers, splitting each
/// prism into three tetrahedra with globally consistent diagonals. Side facets
/// inherit the 2D boundary tags; the new z faces are tagged z_min=90 / z_max=91.
pub fn extrude<S: Scalar>(mesh2d: &Mesh<S>, thickness: f64, layers: usize) -> Result<Mesh<S>, MeshError> {
    let counts: BTreeMap<u32, usize> =
        mesh2d.region_tags.iter().map(|&t| (t, layers)).collect();
    extrude_with_layers(mesh2d, thickness / layers as f64, &counts)
}

/// Extrudes each region to its own layer count at a common layer height, so
/// regions of different thickness stay conforming at their shared interface.
/// Exposed side surfaces above a shorter neighbor are tagged step=92.
pub fn extrude_tiered<S: Scalar>(
    mesh2d: &Mesh<S>,
    layer_height: f64,
    layers_by_region: &BTreeMap<u32, usize>,
) -> Result<Mesh<S>, MeshError> {
    extrude_with_layers(mesh2d, layer_height, layers_by_region)
}

fn extrude_with_layers<S: Scalar>(
    mesh2d: &Mesh<S>,
    layer_height: f64,
    layers_by_region: &BTreeMap<u32, usize>,
) -> Result<Mesh<S>, MeshError> {
    if mesh2d.dim != 2 {
        return Err(MeshError::InvalidArgument("extrude expects a 2D mesh".into()));
    }
    if layer_height <= 0.0 {
        return Err(MeshError::InvalidArgument("layer height must be positive".into()));
    }
    let mut cell_layers = Vec::with_capacity(mesh2d.n_cells());
    for (ci, tag) in mesh2d.region_tags.iter().enumerate() {
        let n = *layers_by_region.get(tag).ok_or_else(|| {
            MeshError::InvalidArgument(format!("no layer count for region tag {tag} (cell {ci})"))
        })?;
        if n < 1 {
            return Err(MeshError::InvalidArgument("layer count must be >= 1".into()));
        }
        cell_layers.push(n);
    }
    for (ci, cell) in mesh2d.cells.iter().enumerate() {
        if super::signed_measure(2, &mesh2d.vertices, cell) <= S::zero() {
            return Err(MeshError::Internal(format!("inconsistent 2D orientation at cell {ci}")));
        }
    }

    let nv2 = mesh2d.n_vertices();
    let mut vertex_levels = vec![0usize; nv2];
    for (ci, cell) in mesh2d.cells.iter().enumerate() {
        for &v in &cell[..3] {
            vertex_levels[v] = vertex_levels[v].max(cell_layers[ci]);
        }
    }
    // vertex-major numbering: keeps same-level ids ordered like the 2D ids
    let mut offset = vec![0usize; nv2 + 1];
    for v in 0..nv2 {
        offset[v + 1] = offset[v] + vertex_levels[v] + 1;
    }
    let id3 = |v: usize, l: usize| offset[v] + l;
    let mut vertices = vec![[S::zero(); 3]; offset[nv2]];
    for v in 0..nv2 {
        for l in 0..=vertex_levels[v] {
            vertices[id3(v, l)] = [
                mesh2d.vertices[v][0],
                mesh2d.vertices[v][1],
                S::of(layer_height * l as f64),
            ];
        }
    }

    let mut cells = Vec::new();
    let mut regions = Vec::new();
    for (ci, cell) in mesh2d.cells.iter().enumerate() {
        let mut s = [cell[0], cell[1], cell[2]];
        s.sort_unstable();
        for l in 0..cell_layers[ci] {
            let b = [id3(s[0], l), id3(s[1], l), id3(s[2], l)];
            let t = [id3(s[0], l + 1), id3(s[1], l + 1), id3(s[2], l + 1)];
            cells.push([b[0], b[1], b[2], t[0]]);
            cells.push([b[1], b[2], t[0], t[1]]);
            cells.push([b[2], t[0], t[1], t[2]]);
            regions.push(mesh2d.region_tags[ci]);
            regions.push(mesh2d.region_tags[ci]);
            regions.push(mesh2d.region_tags[ci]);
        }
    }

    let incidence = mesh2d.facet_incidence();
    // side quad (u, v) between levels l and l+1 split along (bottom of max, top of min)
    let side_triangles = |u: usize, v: usize, l: usize| -> [[usize; 3]; 2] {
        let (p, q) = (u.min(v), u.max(v));
        [
            [id3(p, l), id3(q, l), id3(p, l + 1)],
            [id3(q, l), id3(q, l + 1), id3(p, l + 1)],
        ]
    };

    let mut boundary = Vec::new();
    for (verts, tag) in &mesh2d.boundary_facets {
        let key = super::sorted_facet(2, verts);
        let ci = incidence[&key][0];
        for l in 0..cell_layers[ci] {
            for tri in side_triangles(verts[0], verts[1], l) {
                boundary.push((tri, *tag));
            }
        }
    }
    // exposed steps where neighboring regions have different heights
    let mut has_step = false;
    for (facet, cs) in &incidence {
        if cs.len() == 2 {
            let (n1, n2) = (cell_layers[cs[0]], cell_layers[cs[1]]);
            if n1 != n2 {
                has_step = true;
                for l in n1.min(n2)..n1.max(n2) {
                    for tri in side_triangles(facet[0], facet[1], l) {
                        boundary.push((tri, TAG_STEP));
                    }
                }
            }
        }
    }
    for (ci, cell) in mesh2d.cells.iter().enumerate() {
        boundary.push(([id3(cell[0], 0), id3(cell[1], 0), id3(cell[2], 0)], TAG_Z_MIN));
        let top = cell_layers[ci];
        boundary.push(([id3(cell[0], top), id3(cell[1], top), id3(cell[2], top)], TAG_Z_MAX));
    }

    let mut legend = mesh2d.legend.clone();
    legend.insert(TAG_Z_MIN, "z_min")?;
    legend.insert(TAG_Z_MAX, "z_max")?;
    if has_step {
        legend.insert(TAG_STEP, "step")?;
    }
    Mesh::new(3, vertices, cells, boundary, regions, legend)
}
