use std::collections::BTreeMap;

use super::*;

#[test]
fn minimal_rectangle_counts() {
    let m: Mesh<f64> = generate_rectangle(0.05, 0.10, 1, 1).unwrap();
    assert_eq!(m.n_vertices(), 4);
    assert_eq!(m.n_cells(), 2);
    assert_eq!(m.boundary_facets.len(), 4);
    m.check_boundary_coverage().unwrap();
}

#[test]
fn rectangle_area_matches_sum_of_triangle_areas() {
    let m: Mesh<f64> = generate_rectangle(0.05, 0.10, 10, 20).unwrap();
    assert_eq!(m.n_cells(), 400);
    // independent shoelace accumulation
    let mut area = 0.0;
    for c in 0..m.n_cells() {
        let v = m.cell_vertices(c);
        let (a, b, d) = (m.vertices[v[0]], m.vertices[v[1]], m.vertices[v[2]]);
        area += 0.5 * ((b[0] - a[0]) * (d[1] - a[1]) - (d[0] - a[0]) * (b[1] - a[1])).abs();
    }
    assert!((area - 0.005).abs() < 1e-12);
    assert!((m.total_measure() - 0.005).abs() < 1e-12);
}

#[test]
fn rectangle_boundary_tags_match_side_predicates() {
    let (w, h) = (0.05, 0.10);
    let m: Mesh<f64> = generate_rectangle(w, h, 2, 4).unwrap();
    for (verts, tag) in &m.boundary_facets {
        let (a, b) = (m.vertices[verts[0]], m.vertices[verts[1]]);
        let ok = match m.legend.name(*tag).unwrap() {
            "bottom" => a[1].abs() < 1e-12 && b[1].abs() < 1e-12,
            "top" => (a[1] - h).abs() < 1e-12 && (b[1] - h).abs() < 1e-12,
            "left" => a[0].abs() < 1e-12 && b[0].abs() < 1e-12,
            "right" => (a[0] - w).abs() < 1e-12 && (b[0] - w).abs() < 1e-12,
            other => panic!("unexpected tag {other}"),
        };
        assert!(ok, "facet {verts:?} mis-tagged");
    }
}

#[test]
fn rectangle_rejects_nonpositive_dimensions() {
    assert!(matches!(
        generate_rectangle::<f64>(-1.0, 1.0, 2, 2),
        Err(MeshError::InvalidArgument(_))
    ));
    assert!(matches!(
        generate_rectangle::<f64>(1.0, 1.0, 0, 2),
        Err(MeshError::InvalidArgument(_))
    ));
}

#[test]
fn single_ring_disc_is_a_fan_of_positive_triangles() {
    let m: Mesh<f64> = generate_disc(0.10, 1, 10.0).unwrap();
    assert_eq!(m.n_cells(), 6);
    assert_eq!(m.n_vertices(), 7);
    for c in 0..m.n_cells() {
        assert!(m.cell_measure(c) > 0.0);
    }
    m.check_boundary_coverage().unwrap();
}

#[test]
fn disc_area_approaches_analytic() {
    let m: Mesh<f64> = generate_disc(0.10, 8, 10.0).unwrap();
    let analytic = std::f64::consts::PI * 0.0025;
    assert!((m.total_measure() - analytic).abs() / analytic < 0.01);
}

#[test]
fn disc_top_arc_facets_sit_near_the_top() {
    let m: Mesh<f64> = generate_disc(0.10, 8, 10.0).unwrap();
    let top = m.legend.tag("top_arc").unwrap();
    let facets = m.facets_with_tag(top);
    assert!(!facets.is_empty());
    for fi in facets {
        let (verts, _) = &m.boundary_facets[fi];
        for &v in verts.iter().take(2) {
            assert!(m.vertices[v][1] > 0.9 * 0.05, "vertex {v} not near top");
        }
    }
    assert!(matches!(generate_disc::<f64>(0.10, 0, 10.0), Err(MeshError::InvalidArgument(_))));
}

#[test]
fn refinement_strictly_decreases_h() {
    let coarse: Mesh<f64> = generate_rectangle(0.05, 0.10, 2, 4).unwrap();
    let fine: Mesh<f64> = generate_rectangle(0.05, 0.10, 4, 8).unwrap();
    assert!(fine.h < coarse.h);
    let dc: Mesh<f64> = generate_disc(0.10, 4, 10.0).unwrap();
    let df: Mesh<f64> = generate_disc(0.10, 8, 10.0).unwrap();
    assert!(df.h < dc.h);
}

#[test]
fn extruded_unit_triangle_is_three_tets_with_prism_volume() {
    let mut legend = TagLegend::new();
    legend.insert(1, "rim").unwrap();
    legend.insert(100, "domain").unwrap();
    let tri = Mesh::<f64>::new(
        2,
        vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        vec![[0, 1, 2, usize::MAX]],
        vec![
            ([0, 1, usize::MAX], 1),
            ([1, 2, usize::MAX], 1),
            ([0, 2, usize::MAX], 1),
        ],
        vec![100],
        legend,
    )
    .unwrap();
    let m = extrude(&tri, 1.0, 1).unwrap();
    assert_eq!(m.n_cells(), 3);
    assert!((m.total_measure() - 0.5).abs() < 1e-12);
    m.check_boundary_coverage().unwrap();
}

#[test]
fn extruded_rectangle_volume_is_analytic() {
    let r: Mesh<f64> = generate_rectangle(0.05, 0.10, 3, 5).unwrap();
    let m = extrude(&r, 0.025, 2).unwrap();
    assert!((m.total_measure() - 0.05 * 0.10 * 0.025).abs() < 1e-10);
    m.check_boundary_coverage().unwrap();
}

#[test]
fn extruded_disc_boundary_facet_count() {
    let d: Mesh<f64> = generate_disc(0.10, 3, 10.0).unwrap();
    let m = extrude(&d, 0.004, 1).unwrap();
    let side_facets = 2 * d.boundary_facets.len(); // two triangles per quad
    assert_eq!(m.boundary_facets.len(), side_facets + 2 * d.n_cells());
    m.check_boundary_coverage().unwrap();
}

#[test]
fn plate_with_hole_area_and_tags() {
    let m: Mesh<f64> = generate_plate_with_hole(0.5, 1.0, 0.2, 2).unwrap();
    let analytic = 0.5 - std::f64::consts::PI * 0.01;
    assert!((m.total_measure() - analytic).abs() / analytic < 0.02);
    m.check_boundary_coverage().unwrap();

    let coarse: Mesh<f64> = generate_plate_with_hole(0.5, 1.0, 0.2, 1).unwrap();
    for c in 0..coarse.n_cells() {
        assert!(coarse.cell_measure(c) > 0.0);
    }
    let hole = coarse.legend.tag("hole").unwrap();
    assert!(!coarse.facets_with_tag(hole).is_empty());
}

#[test]
fn plate_hole_must_fit_strictly_inside() {
    assert!(generate_plate_with_hole::<f64>(0.5, 1.0, 0.49, 2).is_ok());
    assert!(matches!(
        generate_plate_with_hole::<f64>(0.5, 1.0, 0.51, 2),
        Err(MeshError::InvalidArgument(_))
    ));
}

#[test]
fn thermal_footprint_interface_adjacency() {
    let m: Mesh<f64> = generate_thermal_footprint(0.10, 0.05, 0.05, 4, 30.0).unwrap();
    let copper = m.legend.tag("copper").unwrap();
    let sample = m.legend.tag("sample").unwrap();
    assert!(m.region_tags.iter().any(|&t| t == copper));
    assert!(m.region_tags.iter().any(|&t| t == sample));

    let mut interface = 0usize;
    for (_, cells) in m.facet_incidence() {
        if cells.len() == 2 {
            let (a, b) = (m.region_tags[cells[0]], m.region_tags[cells[1]]);
            if a != b {
                assert!(
                    (a == copper && b == sample) || (a == sample && b == copper),
                    "interface between unexpected regions"
                );
                interface += 1;
            }
        }
    }
    assert!(interface > 0, "no interface facets found");
    m.check_boundary_coverage().unwrap();
}

#[test]
fn thermal_footprint_area_and_feasibility() {
    let m: Mesh<f64> = generate_thermal_footprint(0.10, 0.05, 0.05, 2, 30.0).unwrap();
    let analytic = std::f64::consts::PI * 0.0025; // square is inside the disc
    assert!((m.total_measure() - analytic).abs() / analytic < 0.02);
    assert!(matches!(
        generate_thermal_footprint::<f64>(0.10, 0.05, 0.04, 2, 30.0),
        Err(MeshError::InvalidArgument(_))
    ));
}

#[test]
fn tiered_extrusion_keeps_regions_conforming() {
    let fp: Mesh<f64> = generate_thermal_footprint(0.10, 0.05, 0.05, 1, 30.0).unwrap();
    let copper = fp.legend.tag("copper").unwrap();
    let sample = fp.legend.tag("sample").unwrap();
    let mut layers = BTreeMap::new();
    layers.insert(copper, 4usize);
    layers.insert(sample, 3usize);
    let m = extrude_tiered(&fp, 0.001, &layers).unwrap();
    m.check_boundary_coverage().unwrap();
    // total volume = copper area * 0.004 + sample area * 0.003
    let mut copper_area = 0.0;
    let mut sample_area = 0.0;
    for c in 0..fp.n_cells() {
        if fp.region_tags[c] == copper {
            copper_area += fp.cell_measure(c);
        } else {
            sample_area += fp.cell_measure(c);
        }
    }
    let expect = copper_area * 0.004 + sample_area * 0.003;
    assert!((m.total_measure() - expect).abs() < 1e-12);
    let step = m.legend.tag("step").unwrap();
    assert!(!m.facets_with_tag(step).is_empty());
}

#[test]
fn msh_two_triangle_fixture() {
    let text = "$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n4\n1 0 0 0\n2 1 0 0\n3 1 1 0\n4 0 1 0\n$EndNodes\n$Elements\n6\n1 1 2 7 7 1 2\n2 1 2 7 7 2 3\n3 1 2 7 7 3 4\n4 1 2 7 7 4 1\n5 2 2 1 1 1 2 3\n6 2 2 1 1 1 3 4\n$EndElements\n";
    let m: Mesh<f64> = io::read_msh_str(text).unwrap();
    assert_eq!(m.n_vertices(), 4);
    assert_eq!(m.n_cells(), 2);
    assert_eq!(m.boundary_facets.len(), 4);
}

#[test]
fn msh_rejects_quad_elements_naming_the_type() {
    let text = "$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n4\n1 0 0 0\n2 1 0 0\n3 1 1 0\n4 0 1 0\n$EndNodes\n$Elements\n1\n1 3 2 1 1 1 2 3 4\n$EndElements\n";
    match io::read_msh_str::<f64>(text) {
        Err(MeshError::Parse { message, .. }) => assert!(message.contains("type 3"), "{message}"),
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn msh_round_trip_preserves_vertices_and_cells() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rect.msh");
    let m: Mesh<f64> = generate_rectangle(0.05, 0.10, 3, 4).unwrap();
    write_msh(&m, &path).unwrap();
    let back: Mesh<f64> = read_msh(&path).unwrap();
    assert_eq!(m.n_vertices(), back.n_vertices());
    for (a, b) in m.vertices.iter().zip(&back.vertices) {
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() < 1e-14);
        }
    }
    assert_eq!(m.cells, back.cells);
    assert_eq!(m.region_tags, back.region_tags);
    assert_eq!(m.boundary_facets, back.boundary_facets);
}

#[test]
fn json_round_trip() {
    let m: Mesh<f64> = generate_disc(0.10, 3, 10.0).unwrap();
    let text = mesh_to_json(&m);
    let back: Mesh<f64> = mesh_from_json(&text).unwrap();
    assert_eq!(m.cells, back.cells);
    assert_eq!(m.boundary_facets, back.boundary_facets);
    assert_eq!(m.legend, back.legend);
}
