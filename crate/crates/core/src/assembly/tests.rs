use std::sync::Arc;

use super::*;
use crate::constitutive::ConstitutiveModel;
use crate::fespace::{interpolate, FunctionSpace, ValueShape};
use crate::mesh::{generate_rectangle, Mesh};
use crate::neural::MlpParams;

fn vec_space(nx: usize, ny: usize, degree: usize) -> Arc<FunctionSpace<f64>> {
    let mesh: Arc<Mesh<f64>> = Arc::new(generate_rectangle(0.05, 0.10, nx, ny).unwrap());
    FunctionSpace::build(mesh, degree, ValueShape::Vector).unwrap()
}

fn softening() -> ConstitutiveModel<f64> {
    ConstitutiveModel::ground_truth_softening(1e9, 500.0, 0.3).unwrap()
}

fn linear_elastic() -> ConstitutiveModel<f64> {
    ConstitutiveModel::ground_truth_softening(1e9, 0.0, 0.3).unwrap()
}

fn boundary_nodes(space: &FunctionSpace<f64>) -> Vec<usize> {
    let mut nodes = Vec::new();
    for (tag, _) in space.mesh.legend.iter() {
        if tag < 100 {
            nodes.extend(space.nodes_on_tag(tag).unwrap());
        }
    }
    nodes.sort_unstable();
    nodes.dedup();
    nodes
}

#[test]
fn rigid_translation_has_zero_residual() {
    let space = vec_space(3, 4, 2);
    let model = softening();
    let u = interpolate(&space, |_, out| {
        out[0] = 0.004;
        out[1] = -0.002;
    });
    let (r, _) = assemble_elasticity(&space, &model, &u.dofs, None, false).unwrap();
    // stiffness scale: c1 * mesh size
    let scale = 1e9 * 0.05;
    assert!(r.iter().all(|v| v.abs() / scale < 1e-9), "max {:e}", r.iter().fold(0.0f64, |a, v| a.max(v.abs())));
}

#[test]
fn patch_test_interior_rows_vanish_for_linear_displacement() {
    for degree in [1usize, 3] {
        let space = vec_space(2, 2, degree);
        let model = linear_elastic();
        let u = interpolate(&space, |x, out| {
            out[0] = 1e-3 * x[0] + 2e-4 * x[1];
            out[1] = -3e-4 * x[0] - 5e-4 * x[1];
        });
        let (r, _) = assemble_elasticity(&space, &model, &u.dofs, None, false).unwrap();
        let on_boundary = boundary_nodes(&space);
        let scale = r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for node in 0..space.nnodes {
            if on_boundary.binary_search(&node).is_ok() {
                continue;
            }
            for comp in 0..2 {
                let v = r[space.dof(node, comp)].abs();
                assert!(v / scale < 1e-9, "degree {degree} node {node} comp {comp}: {v:e} vs {scale:e}");
            }
        }
    }
}

#[test]
fn elasticity_jacobian_matches_finite_differences() {
    let space = vec_space(1, 1, 1);
    for model in [softening(), neural_model()] {
        let u0 = interpolate(&space, |x, out| {
            out[0] = -2e-3 * x[0] + 1e-3 * x[1];
            out[1] = 1.5e-3 * x[0] - 3e-3 * x[1];
        });
        let (_, jac) = assemble_elasticity(&space, &model, &u0.dofs, None, true).unwrap();
        let jac = jac.unwrap();
        let h = 1e-9;
        let mut max_entry = 0.0f64;
        for i in 0..space.ndof {
            for j in 0..space.ndof {
                max_entry = max_entry.max(jac.get(i, j).abs());
            }
        }
        for j in 0..space.ndof {
            let mut up = u0.dofs.clone();
            up[j] += h;
            let mut um = u0.dofs.clone();
            um[j] -= h;
            let (rp, _) = assemble_elasticity(&space, &model, &up, None, false).unwrap();
            let (rm, _) = assemble_elasticity(&space, &model, &um, None, false).unwrap();
            for i in 0..space.ndof {
                let fd = (rp[i] - rm[i]) / (2.0 * h);
                let rel = (jac.get(i, j) - fd).abs() / max_entry;
                assert!(rel <= 1e-5, "({i},{j}): {} vs {fd}", jac.get(i, j));
            }
        }
    }
}

fn neural_model() -> ConstitutiveModel<f64> {
    let cfg = crate::constitutive::stress_net_config(&[6]);
    ConstitutiveModel::neural_isotropic_e(MlpParams::init(cfg, 4), 0.3, 100.0, 1e9).unwrap()
}

fn scalar_space(nx: usize, ny: usize) -> Arc<FunctionSpace<f64>> {
    let mesh: Arc<Mesh<f64>> = Arc::new(generate_rectangle(1.0, 1.0, nx, ny).unwrap());
    FunctionSpace::build(mesh, 1, ValueShape::Scalar).unwrap()
}

fn region_props(space: &FunctionSpace<f64>) -> ThermalProps<f64> {
    let mut props = ThermalProps::new();
    for &t in &space.mesh.region_tags {
        props.insert(t, (2500.0, 800.0));
    }
    props
}

#[test]
fn uniform_steady_state_has_zero_heat_residual() {
    let space = scalar_space(3, 3);
    let props = region_props(&space);
    let gt = ConstitutiveModel::ground_truth_conductivity(2.0, 1.0, 0.62, 298.0).unwrap();
    let mut models = ConductivityMap::new();
    for &t in &space.mesh.region_tags {
        models.insert(t, &gt);
    }
    let t = vec![321.0; space.ndof];
    let (r, _) = assemble_heat_step(&space, &props, &models, &t, &t, 1.0, false).unwrap();
    assert!(r.iter().all(|v| v.abs() < 1e-9), "max {:e}", r.iter().fold(0.0f64, |a, v| a.max(v.abs())));
}

#[test]
fn steady_linear_profile_zeroes_interior_heat_rows() {
    // linear T with constant k solves the steady equation; mass term drops out
    let space = scalar_space(4, 4);
    let props = region_props(&space);
    let constant_k = ConstitutiveModel::ground_truth_conductivity(2.0, 0.0, 0.62, 298.0).unwrap();
    let mut models = ConductivityMap::new();
    for &t in &space.mesh.region_tags {
        models.insert(t, &constant_k);
    }
    let t_field = interpolate(&space, |x, out| out[0] = 300.0 + 40.0 * x[0] - 25.0 * x[1]);
    let (r, _) = assemble_heat_step(&space, &props, &models, &t_field.dofs, &t_field.dofs, 0.5, false).unwrap();
    let on_boundary = boundary_nodes(&space);
    let scale = r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for node in 0..space.nnodes {
        if on_boundary.binary_search(&node).is_err() {
            assert!(r[node].abs() / scale < 1e-12, "interior node {node}");
        }
    }
}

#[test]
fn heat_jacobian_matches_finite_differences_including_dk_dt() {
    let space = scalar_space(2, 2);
    let props = region_props(&space);
    let mlp = MlpParams::init(crate::constitutive::conductivity_net_config(&[6]), 11);
    let neural = ConstitutiveModel::neural_conductivity(mlp, 0.1, 4.0, 300.0, 100.0).unwrap();
    let mut models = ConductivityMap::new();
    for &t in &space.mesh.region_tags {
        models.insert(t, &neural);
    }
    let t_old = vec![300.0; space.ndof];
    let t_new: Vec<f64> = (0..space.ndof).map(|k| 320.0 + 15.0 * ((k * 7 % 5) as f64)).collect();
    let (_, jac) = assemble_heat_step(&space, &props, &models, &t_new, &t_old, 2.0, true).unwrap();
    let jac = jac.unwrap();
    let h = 1e-5;
    let mut max_entry = 0.0f64;
    for i in 0..space.ndof {
        for j in 0..space.ndof {
            max_entry = max_entry.max(jac.get(i, j).abs());
        }
    }
    for j in 0..space.ndof {
        let mut tp = t_new.clone();
        tp[j] += h;
        let mut tm = t_new.clone();
        tm[j] -= h;
        let (rp, _) = assemble_heat_step(&space, &props, &models, &tp, &t_old, 2.0, false).unwrap();
        let (rm, _) = assemble_heat_step(&space, &props, &models, &tm, &t_old, 2.0, false).unwrap();
        for i in 0..space.ndof {
            let fd = (rp[i] - rm[i]) / (2.0 * h);
            assert!(
                (jac.get(i, j) - fd).abs() / max_entry <= 1e-5,
                "({i},{j}): {} vs {fd}",
                jac.get(i, j)
            );
        }
    }
}

fn clamp_bcs(space: &Arc<FunctionSpace<f64>>, u_bar: f64) -> Vec<DirichletBC<f64>> {
    let bottom = space.mesh.legend.tag("bottom").unwrap();
    let top = space.mesh.legend.tag("top").unwrap();
    vec![
        DirichletBC::vector_on_tag(space, bottom, |_, out| {
            out[0] = 0.0;
            out[1] = 0.0;
        })
        .unwrap(),
        DirichletBC::vector_on_tag(space, top, |_, out| {
            out[0] = 0.0;
            out[1] = u_bar;
        })
        .unwrap(),
    ]
}

#[test]
fn linear_problem_converges_in_one_newton_iteration() {
    let space = vec_space(2, 4, 1);
    let model = linear_elastic();
    let sys = ElasticitySystem { space: space.clone(), model: &model, traction: None, bcs: clamp_bcs(&space, -1e-3) };
    let (u, report) = sys.solve(vec![0.0; space.ndof], &NewtonConfig::default()).unwrap();
    assert!(report.converged);
    assert_eq!(report.iterations, 1);
    // prescribed values hit exactly
    let top = space.mesh.legend.tag("top").unwrap();
    for n in space.nodes_on_tag(top).unwrap() {
        assert!((u[space.dof(n, 1)] + 1e-3).abs() < 1e-14);
        assert!(u[space.dof(n, 0)].abs() < 1e-14);
    }
}

#[test]
fn softening_law_at_two_percent_strain_converges_with_backtracking() {
    // loaded incrementally with warm starts, as the experiments drive it
    let space = vec_space(2, 4, 2);
    let model = softening();
    let cfg = NewtonConfig { abs_tol: 1e-5, ..Default::default() };
    let mut u = vec![0.0; space.ndof];
    for step in 1..=4 {
        let u_bar = -2e-3 * step as f64 / 4.0;
        let sys = ElasticitySystem { space: space.clone(), model: &model, traction: None, bcs: clamp_bcs(&space, u_bar) };
        let (unew, report) = sys.solve(u, &cfg).unwrap();
        assert!(report.converged);
        assert!(report.iterations <= 15, "step {step} took {} iterations", report.iterations);
        u = unew;
    }
}

#[test]
fn max_iterations_exceeded_is_reported() {
    let space = vec_space(2, 4, 1);
    let model = softening();
    let sys = ElasticitySystem { space: space.clone(), model: &model, traction: None, bcs: clamp_bcs(&space, -2e-3) };
    let cfg = NewtonConfig { max_iter: 1, ..Default::default() };
    match sys.solve(vec![0.0; space.ndof], &cfg) {
        Err(SolverFailure::MaxIterations { .. }) => {}
        other => panic!("expected max-iterations failure, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn zero_displacement_has_zero_reaction() {
    let space = vec_space(2, 2, 1);
    let model = softening();
    let top = space.mesh.legend.tag("top").unwrap();
    let f = reaction_force(&space, &model, &vec![0.0; space.ndof], top, [0.0, 1.0, 0.0]).unwrap();
    assert_eq!(f, 0.0);
}

#[test]
fn roller_uniaxial_reaction_matches_plane_strain_formula() {
    // rollers top/bottom (only u_y prescribed) plus one pinned corner keep the
    // state homogeneous, so F = E/(1-nu^2) * A * u_bar / H holds exactly
    let space = vec_space(8, 16, 2);
    let model = linear_elastic();
    let bottom = space.mesh.legend.tag("bottom").unwrap();
    let top = space.mesh.legend.tag("top").unwrap();
    let u_bar = -1e-3;
    let bcs = vec![
        DirichletBC::component_on_tag(&space, bottom, 1, |_| 0.0).unwrap(),
        DirichletBC::component_on_tag(&space, top, 1, |_| u_bar).unwrap(),
        DirichletBC::single(space.dof(0, 0), 0.0),
    ];
    let sys = ElasticitySystem { space: space.clone(), model: &model, traction: None, bcs };
    let cfg = NewtonConfig { abs_tol: 1e-6, ..Default::default() };
    let (u, _) = sys.solve(vec![0.0; space.ndof], &cfg).unwrap();
    let f = reaction_force(&space, &model, &u, top, [0.0, 1.0, 0.0]).unwrap();
    let e_eff = 1e9 / (1.0 - 0.3f64 * 0.3);
    let analytic = e_eff * 0.05 * u_bar / 0.10;
    assert!((f - analytic).abs() / analytic.abs() < 0.01, "{f} vs {analytic}");

    let fb = reaction_force(&space, &model, &u, bottom, [0.0, 1.0, 0.0]).unwrap();
    assert!((f + fb).abs() / f.abs() < 1e-8, "balance: {f} + {fb}");
}

#[test]
fn clamped_reactions_balance_globally() {
    let space = vec_space(3, 6, 2);
    let model = softening();
    let cfg = NewtonConfig { abs_tol: 1e-4, max_iter: 40, ls_max_steps: 20, ..Default::default() };
    let mut u = vec![0.0; space.ndof];
    for step in 1..=10 {
        let u_bar = -1.5e-3 * step as f64 / 10.0;
        let sys = ElasticitySystem { space: space.clone(), model: &model, traction: None, bcs: clamp_bcs(&space, u_bar) };
        u = sys.solve(u, &cfg).unwrap().0;
    }
    let top = space.mesh.legend.tag("top").unwrap();
    let bottom = space.mesh.legend.tag("bottom").unwrap();
    for dir in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]] {
        let ft = reaction_force(&space, &model, &u, top, dir).unwrap();
        let fb = reaction_force(&space, &model, &u, bottom, dir).unwrap();
        let scale = ft.abs().max(fb.abs()).max(1e-12);
        assert!((ft + fb).abs() / scale < 1e-8, "dir {dir:?}: {ft} + {fb}");
    }
}

#[test]
fn traction_loaded_edge_balances_reaction() {
    // pull the top edge with a uniform traction; bottom reaction must equal
    // the applied resultant with opposite sign
    let space = vec_space(2, 4, 2);
    let model = linear_elastic();
    let top = space.mesh.legend.tag("top").unwrap();
    let bottom = space.mesh.legend.tag("bottom").unwrap();
    let t = 1e6;
    let bcs = vec![DirichletBC::vector_on_tag(&space, bottom, |_, out| {
        out[0] = 0.0;
        out[1] = 0.0;
    })
    .unwrap()];
    let sys = ElasticitySystem { space: space.clone(), model: &model, traction: Some((top, [0.0, t, 0.0])), bcs };
    let cfg = NewtonConfig { abs_tol: 1e-6, ..Default::default() };
    let (u, _) = sys.solve(vec![0.0; space.ndof], &cfg).unwrap();
    let fb = reaction_force(&space, &model, &u, bottom, [0.0, 1.0, 0.0]).unwrap();
    let applied = t * 0.05;
    assert!((fb + applied).abs() / applied < 1e-8, "{fb} vs {}", -applied);
}
