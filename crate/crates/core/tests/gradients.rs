//! Adjoint gradients versus central finite differences of the full pipeline
//! (re-solving the PDE at perturbed parameters) on miniature problems.

use std::collections::BTreeMap;
use std::sync::Arc;

use difem::adjoint::{
    fd_check, grad_static, grad_transient, loss, step_loss_gradient, BoundaryForceFunctional, LossKind,
    LossSpec, Observation, TransientAdjointInput,
};
use difem::assembly::{
    reaction_force, ConductivityMap, DirichletBC, ElasticitySystem, HeatStepSystem, NewtonConfig,
    ThermalProps,
};
use difem::constitutive::{conductivity_net_config, stress_net_config, ConstitutiveModel};
use difem::fespace::{FunctionSpace, ValueShape};
use difem::mesh::{generate_rectangle, Mesh};
use difem::neural::MlpParams;

fn tight() -> NewtonConfig {
    NewtonConfig { abs_tol: 1e-8, rel_tol: 1e-14, max_iter: 60, ls_max_steps: 20, ..Default::default() }
}

fn tiny_net(seed: u64) -> MlpParams<f64> {
    MlpParams::init(stress_net_config(&[4]), seed)
}

fn uniaxial_bcs(space: &Arc<FunctionSpace<f64>>, u_bar: f64) -> Vec<DirichletBC<f64>> {
    let bottom = space.mesh.legend.tag("bottom").unwrap();
    let top = space.mesh.legend.tag("top").unwrap();
    vec![
        DirichletBC::vector_on_tag(space, bottom, |_, out| {
            out[0] = 0.0;
            out[1] = 0.0;
        })
        .unwrap(),
        DirichletBC::vector_on_tag(space, top, move |_, out| {
            out[0] = 0.0;
            out[1] = u_bar;
        })
        .unwrap(),
    ]
}

/// Force-loss pipeline on a 2-cell mesh: solve, read the top reaction, compare
/// against a fixed observation.
#[test]
fn static_force_loss_gradient_matches_full_fd_sweep() {
    let mesh: Arc<Mesh<f64>> = Arc::new(generate_rectangle(0.05, 0.10, 1, 1).unwrap());
    let space = FunctionSpace::build(mesh, 1, ValueShape::Vector).unwrap();
    let u_bar = -8e-4;
    let model0 =
        ConstitutiveModel::neural_isotropic_e(tiny_net(21), 0.3, 100.0, 1e9).unwrap();
    let top = space.mesh.legend.tag("top").unwrap();
    let obs_force = -6.0e5; // fixed synthetic observation, away from the |.| kink
    let spec = LossSpec::new(LossKind::RelativeForce, vec![Observation::Scalar(obs_force)]);

    let pipeline = |flat: &[f64]| -> Result<f64, String> {
        let mut model = model0.clone();
        model.set_params_flat(flat).map_err(|e| e.to_string())?;
        let sys = ElasticitySystem {
            space: space.clone(),
            model: &model,
            traction: None,
            bcs: uniaxial_bcs(&space, u_bar),
        };
        let (u, _) = sys.solve(vec![0.0; space.ndof], &tight()).map_err(|e| e.to_string())?;
        let f = reaction_force(&space, &model, &u, top, [0.0, 1.0, 0.0]).map_err(|e| e.to_string())?;
        loss(&spec, &[Observation::Scalar(f)]).map_err(|e| e.to_string())
    };

    // adjoint gradient
    let sys = ElasticitySystem {
        space: space.clone(),
        model: &model0,
        traction: None,
        bcs: uniaxial_bcs(&space, u_bar),
    };
    let (u, _) = sys.solve(vec![0.0; space.ndof], &tight()).unwrap();
    let f = reaction_force(&space, &model0, &u, top, [0.0, 1.0, 0.0]).unwrap();
    let dl_df = match step_loss_gradient(
        &Observation::Scalar(f),
        &Observation::Scalar(obs_force),
        1.0,
        0,
    )
    .unwrap()
    {
        Observation::Scalar(v) => v,
        _ => unreachable!(),
    };
    let mut grad = vec![0.0; model0.param_count()];
    grad_static(
        &sys,
        &u,
        None,
        Some(&BoundaryForceFunctional { tag: top, direction: [0.0, 1.0, 0.0], dl_df }),
        &mut grad,
    )
    .unwrap();

    let flat = model0.params_flat();
    let all: Vec<usize> = (0..flat.len()).collect();
    let report = fd_check(pipeline, &flat, &grad, &all, 1e-5).unwrap();
    assert!(
        report.max_rel_error <= 1e-4,
        "max rel {:.3e} at {} ({} vs {})",
        report.max_rel_error,
        report.worst_index,
        report.entries.iter().find(|e| e.index == report.worst_index).unwrap().analytic,
        report.entries.iter().find(|e| e.index == report.worst_index).unwrap().finite_difference,
    );
}

/// Field-loss pipeline: traction-loaded plate, displacement-field observation,
/// two-network Lamé model.
#[test]
fn static_field_loss_gradient_matches_full_fd_sweep() {
    let mesh: Arc<Mesh<f64>> = Arc::new(generate_rectangle(0.05, 0.10, 1, 2).unwrap());
    let space = FunctionSpace::build(mesh, 1, ValueShape::Vector).unwrap();
    let top = space.mesh.legend.tag("top").unwrap();
    let bottom = space.mesh.legend.tag("bottom").unwrap();
    let model0 = ConstitutiveModel::neural_lame(
        MlpParams::init(stress_net_config(&[2]), 33),
        MlpParams::init(stress_net_config(&[2]), 34),
        100.0,
        1e9,
    )
    .unwrap();
    let traction = Some((top, [0.0, -2.0e6, 0.0]));
    let bcs = |space: &Arc<FunctionSpace<f64>>| {
        vec![DirichletBC::vector_on_tag(space, bottom, |_, out| {
            out[0] = 0.0;
            out[1] = 0.0;
        })
        .unwrap()]
    };

    // synthetic observation: ground-truth solve plus a fixed offset
    let gt = ConstitutiveModel::ground_truth_lame(1e9, 500.0).unwrap();
    let gt_sys = ElasticitySystem { space: space.clone(), model: &gt, traction, bcs: bcs(&space) };
    let (u_obs, _) = gt_sys.solve(vec![0.0; space.ndof], &tight()).unwrap();
    let obs: Vec<f64> = u_obs.iter().map(|v| v * 1.05 + 1e-7).collect();
    let spec = LossSpec::new(LossKind::RelativeField, vec![Observation::Vector(obs.clone())]);

    let pipeline = |flat: &[f64]| -> Result<f64, String> {
        let mut model = model0.clone();
        model.set_params_flat(flat).map_err(|e| e.to_string())?;
        let sys = ElasticitySystem { space: space.clone(), model: &model, traction, bcs: bcs(&space) };
        let (u, _) = sys.solve(vec![0.0; space.ndof], &tight()).map_err(|e| e.to_string())?;
        loss(&spec, &[Observation::Vector(u)]).map_err(|e| e.to_string())
    };

    let sys = ElasticitySystem { space: space.clone(), model: &model0, traction, bcs: bcs(&space) };
    let (u, _) = sys.solve(vec![0.0; space.ndof], &tight()).unwrap();
    let dldu = match step_loss_gradient(
        &Observation::Vector(u.clone()),
        &Observation::Vector(obs.clone()),
        1.0,
        0,
    )
    .unwrap()
    {
        Observation::Vector(v) => v,
        _ => unreachable!(),
    };
    let mut grad = vec![0.0; model0.param_count()];
    grad_static(&sys, &u, Some(&dldu), None, &mut grad).unwrap();

    let flat = model0.params_flat();
    let all: Vec<usize> = (0..flat.len()).collect();
    let report = fd_check(pipeline, &flat, &grad, &all, 1e-5).unwrap();
    assert!(report.max_rel_error <= 1e-4, "max rel {:.3e} at {}", report.max_rel_error, report.worst_index);
}

/// When the observations come from the same parameters, the gradient vanishes
/// (up to solver tolerance amplification).
#[test]
fn gradient_is_zero_when_observations_match_the_model() {
    let mesh: Arc<Mesh<f64>> = Arc::new(generate_rectangle(0.05, 0.10, 1, 1).unwrap());
    let space = FunctionSpace::build(mesh, 1, ValueShape::Vector).unwrap();
    let model = ConstitutiveModel::neural_isotropic_e(tiny_net(77), 0.3, 100.0, 1e9).unwrap();
    let top = space.mesh.legend.tag("top").unwrap();
    let sys = ElasticitySystem {
        space: space.clone(),
        model: &model,
        traction: None,
        bcs: uniaxial_bcs(&space, -5e-4),
    };
    let (u, _) = sys.solve(vec![0.0; space.ndof], &tight()).unwrap();
    let f = reaction_force(&space, &model, &u, top, [0.0, 1.0, 0.0]).unwrap();
    // observation equals the model output: subgradient at the kink is zero
    let dl_df = match step_loss_gradient(&Observation::Scalar(f), &Observation::Scalar(f), 1.0, 0).unwrap() {
        Observation::Scalar(v) => v,
        _ => unreachable!(),
    };
    assert_eq!(dl_df, 0.0);
    let mut grad = vec![0.0; model.param_count()];
    grad_static(
        &sys,
        &u,
        None,
        Some(&BoundaryForceFunctional { tag: top, direction: [0.0, 1.0, 0.0], dl_df }),
        &mut grad,
    )
    .unwrap();
    assert!(grad.iter().all(|g| g.abs() < 1e-12));
}

fn thermal_setup(
    space: &Arc<FunctionSpace<f64>>,
) -> (ThermalProps<f64>, u32, u32) {
    let mut props = ThermalProps::new();
    let region = space.mesh.region_tags[0];
    props.insert(region, (2500.0, 800.0));
    let left = space.mesh.legend.tag("left").unwrap();
    (props, region, left)
}

fn run_trajectory(
    space: &Arc<FunctionSpace<f64>>,
    props: &ThermalProps<f64>,
    models: &ConductivityMap<'_, f64>,
    left: u32,
    boundary_temps: &[f64],
    dt: f64,
) -> (Vec<Vec<f64>>, Vec<Vec<DirichletBC<f64>>>) {
    let mut trajectory = vec![vec![300.0; space.ndof]];
    let mut bcs_per_step = Vec::new();
    for &tb in boundary_temps {
        let bcs = vec![DirichletBC::component_on_tag(space, left, 0, |_| tb).unwrap()];
        let sys = HeatStepSystem {
            space: space.clone(),
            props,
            models,
            t_old: trajectory.last().unwrap().clone(),
            dt,
            bcs: bcs.clone(),
        };
        let (t, _) = sys.solve(trajectory.last().unwrap().clone(), &tight()).unwrap();
        trajectory.push(t);
        bcs_per_step.push(bcs);
    }
    (trajectory, bcs_per_step)
}

/// Three-step transient toy problem, full FD sweep over the conductivity net.
#[test]
fn transient_gradient_matches_full_fd_sweep() {
    let mesh: Arc<Mesh<f64>> = Arc::new(generate_rectangle(0.1, 0.02, 3, 1).unwrap());
    let space = FunctionSpace::build(mesh, 1, ValueShape::Scalar).unwrap();
    let (props, region, left) = thermal_setup(&space);
    let net = MlpParams::init(conductivity_net_config(&[2]), 5);
    let model0 = ConstitutiveModel::neural_conductivity(net, 0.1, 4.0, 300.0, 100.0).unwrap();
    let boundary_temps = [330.0, 370.0, 355.0];
    let dt = 40.0;

    // observations from the ground-truth law, slightly offset
    let gt = ConstitutiveModel::ground_truth_conductivity(2.0, 1.0, 0.62, 298.0).unwrap();
    let mut gt_models = ConductivityMap::new();
    gt_models.insert(region, &gt);
    let (gt_traj, _) = run_trajectory(&space, &props, &gt_models, left, &boundary_temps, dt);
    let observations: Vec<Observation<f64>> = gt_traj[1..]
        .iter()
        .map(|t| Observation::Vector(t.iter().map(|v| v * 1.01).collect()))
        .collect();
    let spec = LossSpec::new(LossKind::RelativeTemperature, observations);

    let pipeline = |flat: &[f64]| -> Result<f64, String> {
        let mut model = model0.clone();
        model.set_params_flat(flat).map_err(|e| e.to_string())?;
        let mut models = ConductivityMap::new();
        models.insert(region, &model);
        let (traj, _) = run_trajectory(&space, &props, &models, left, &boundary_temps, dt);
        let fem: Vec<Observation<f64>> = traj[1..].iter().map(|t| Observation::Vector(t.clone())).collect();
        loss(&spec, &fem).map_err(|e| e.to_string())
    };

    let mut models = ConductivityMap::new();
    models.insert(region, &model0);
    let (traj, bcs_per_step) = run_trajectory(&space, &props, &models, left, &boundary_temps, dt);
    let mut dldt = Vec::new();
    for (n, t) in traj[1..].iter().enumerate() {
        let g = step_loss_gradient(
            &Observation::Vector(t.clone()),
            &spec.observations[n],
            spec.weights[n],
            n,
        )
        .unwrap();
        match g {
            Observation::Vector(v) => dldt.push(Some(v)),
            _ => unreachable!(),
        }
    }
    let mut grad = vec![0.0; model0.param_count()];
    grad_transient(
        &TransientAdjointInput {
            space: &space,
            props: &props,
            models: &models,
            dt,
            trajectory: &traj,
            bcs_per_step: &bcs_per_step,
            dldt: &dldt,
        },
        &mut grad,
    )
    .unwrap();

    let flat = model0.params_flat();
    let all: Vec<usize> = (0..flat.len()).collect();
    let report = fd_check(pipeline, &flat, &grad, &all, 1e-5).unwrap();
    assert!(report.max_rel_error <= 1e-4, "max rel {:.3e} at {}", report.max_rel_error, report.worst_index);
}

/// A single implicit step with no mass-coupling history must agree with the
/// directly coded static adjoint of that step.
#[test]
fn single_step_transient_reduces_to_static_adjoint() {
    let mesh: Arc<Mesh<f64>> = Arc::new(generate_rectangle(0.1, 0.05, 2, 1).unwrap());
    let space = FunctionSpace::build(mesh, 1, ValueShape::Scalar).unwrap();
    let (props, region, left) = thermal_setup(&space);
    let net = MlpParams::init(conductivity_net_config(&[2]), 9);
    let model = ConstitutiveModel::neural_conductivity(net, 0.1, 4.0, 300.0, 100.0).unwrap();
    let mut models = ConductivityMap::new();
    models.insert(region, &model);
    let dt = 25.0;
    let (traj, bcs_per_step) = run_trajectory(&space, &props, &models, left, &[350.0], dt);

    let dldu: Vec<f64> = (0..space.ndof).map(|k| ((k * 3) as f64 * 0.1).sin()).collect();
    let mut g_transient = vec![0.0; model.param_count()];
    grad_transient(
        &TransientAdjointInput {
            space: &space,
            props: &props,
            models: &models,
            dt,
            trajectory: &traj,
            bcs_per_step: &bcs_per_step,
            dldt: &[Some(dldu.clone())],
        },
        &mut g_transient,
    )
    .unwrap();

    // straight-line single-solve adjoint: J^T lambda = -g, then the VJP pass
    let (_, jac) = difem::assembly::assemble_heat_step(
        &space, &props, &models, &traj[1], &traj[0], dt, true,
    )
    .unwrap();
    let mut jac = jac.unwrap();
    let constrained = difem::assembly::merge_constraints(&bcs_per_step[0]);
    let mut dummy = vec![0.0; space.ndof];
    jac.eliminate_dirichlet(&mut dummy, &constrained, &traj[1]);
    let mut rhs: Vec<f64> = dldu.iter().map(|v| -v).collect();
    for &(c, _) in &constrained {
        rhs[c] = 0.0;
    }
    let lu = difem::sparse::BandLu::factor(&jac, Some(difem::sparse::rcm_ordering(&jac))).unwrap();
    let lambda = lu.solve_transpose(&rhs).unwrap();
    let mut g_static = vec![0.0; model.param_count()];
    difem::assembly::accumulate_conductivity_vjp(&space, &models, &traj[1], &lambda, &mut g_static).unwrap();

    for (a, b) in g_transient.iter().zip(&g_static) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-12), "{a} vs {b}");
    }
}

/// Unobserved steps carry no loss-gradient term but still transport the
/// adjoint state backward.
#[test]
fn final_step_only_observation_gives_finite_gradient() {
    let mesh: Arc<Mesh<f64>> = Arc::new(generate_rectangle(0.1, 0.02, 2, 1).unwrap());
    let space = FunctionSpace::build(mesh, 1, ValueShape::Scalar).unwrap();
    let (props, region, left) = thermal_setup(&space);
    let net = MlpParams::init(conductivity_net_config(&[2]), 13);
    let model = ConstitutiveModel::neural_conductivity(net, 0.1, 4.0, 300.0, 100.0).unwrap();
    let mut models = ConductivityMap::new();
    models.insert(region, &model);
    let dt = 30.0;
    let (traj, bcs_per_step) = run_trajectory(&space, &props, &models, left, &[340.0, 360.0, 380.0], dt);

    let dld_final: Vec<f64> = vec![1e-3; space.ndof];
    let dldt = vec![None, None, Some(dld_final)];
    let mut grad = vec![0.0; model.param_count()];
    grad_transient(
        &TransientAdjointInput {
            space: &space,
            props: &props,
            models: &models,
            dt,
            trajectory: &traj,
            bcs_per_step: &bcs_per_step,
            dldt: &dldt,
        },
        &mut grad,
    )
    .unwrap();
    assert!(grad.iter().all(|g| g.is_finite()));
    assert!(grad.iter().any(|g| g.abs() > 0.0), "earlier steps must still contribute");
}
