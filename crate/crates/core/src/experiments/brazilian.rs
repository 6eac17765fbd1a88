//! Load-controlled Brazilian disc test: a disc loaded by a compressive traction
//! over its top arc, fixed over its bottom arc; two networks learn the Lamé
//! parameters from noisy displacement fields.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::config::{interleave_splits, BrazilianConfig, Split, CONFIG_SCHEMA_VERSION};
use crate::adjoint::{grad_static, step_loss_gradient, Observation};
use crate::assembly::{DirichletBC, ElasticitySystem, NewtonConfig};
use crate::constitutive::{stress_net_config, ConstitutiveModel};
use crate::fespace::{FunctionSpace, ValueShape};
use crate::mesh::generate_disc;
use crate::neural::MlpParams;
use crate::train::{apply_relative_noise, TrainError, TrainProblem};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BrazilianStep {
    pub force_n_per_m: f64,
    pub displacement_clean: Vec<f64>,
    pub displacement_obs: Vec<f64>,
    pub split: Split,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BrazilianDataset {
    pub schema_version: u32,
    pub seed: u64,
    /// Calibrated (or configured) maximum applied load per unit thickness.
    pub max_force_n_per_m: f64,
    /// Loaded arc length, so tractions can be reconstructed.
    pub arc_length_m: f64,
    pub steps: Vec<BrazilianStep>,
}

pub fn build_space(cfg: &BrazilianConfig) -> Result<Arc<FunctionSpace<f64>>, TrainError> {
    let mesh = generate_disc(cfg.diameter_m, cfg.rings, cfg.arc_half_angle_deg)?;
    Ok(FunctionSpace::build(Arc::new(mesh), cfg.element_degree, ValueShape::Vector)?)
}

pub fn newton_config(cfg: &BrazilianConfig) -> NewtonConfig {
    NewtonConfig {
        abs_tol: cfg.newton_abs_tol,
        rel_tol: 1e-14,
        max_iter: cfg.newton_max_iter,
        ls_max_steps: 20,
        stall_rel_tol: 1e-6,
        ..Default::default()
    }
}

pub fn ground_truth(cfg: &BrazilianConfig) -> Result<ConstitutiveModel<f64>, TrainError> {
    Ok(ConstitutiveModel::ground_truth_lame(cfg.c1_pa, cfg.c2)?)
}

/// Fresh networks initialized near the constant laws lambda = 2 c1, mu = c1
/// (see the uniaxial module for why damped initialization is required).
pub fn fresh_model(cfg: &BrazilianConfig) -> Result<ConstitutiveModel<f64>, TrainError> {
    let net = stress_net_config(&cfg.hidden_widths);
    let mut lambda = MlpParams::init(net.clone(), cfg.seed);
    lambda.scale_output_weights(0.1);
    lambda.set_output_level(2.0);
    let mut mu = MlpParams::init(net, cfg.seed.wrapping_add(1));
    mu.scale_output_weights(0.1);
    mu.set_output_level(1.0);
    Ok(ConstitutiveModel::neural_lame(
        lambda,
        mu,
        cfg.strain_input_scale,
        cfg.modulus_output_scale_pa,
    )?)
}

/// Total length of the loaded top arc.
pub fn arc_length(space: &Arc<FunctionSpace<f64>>) -> Result<f64, TrainError> {
    let top = space.mesh.legend.tag("top_arc").expect("top_arc tag");
    let facets = space.facet_integration(top, 2)?;
    Ok(facets.iter().map(|f| f.measure).sum())
}

/// Fixed bottom arc; zero tangential (horizontal) displacement on the top arc.
pub fn bcs(space: &Arc<FunctionSpace<f64>>) -> Result<Vec<DirichletBC<f64>>, TrainError> {
    let bottom = space.mesh.legend.tag("bottom_arc").expect("bottom_arc tag");
    let top = space.mesh.legend.tag("top_arc").expect("top_arc tag");
    Ok(vec![
        DirichletBC::vector_on_tag(space, bottom, |_, out| {
            out[0] = 0.0;
            out[1] = 0.0;
        })?,
        DirichletBC::component_on_tag(space, top, 0, |_| 0.0)?,
    ])
}

/// Builds the elasticity system for one applied load (compressive traction
/// F / S over the top arc).
pub fn system<'a>(
    space: &Arc<FunctionSpace<f64>>,
    model: &'a ConstitutiveModel<f64>,
    force: f64,
    arc_len: f64,
) -> Result<ElasticitySystem<'a, f64>, TrainError> {
    let top = space.mesh.legend.tag("top_arc").expect("top_arc tag");
    Ok(ElasticitySystem {
        space: space.clone(),
        model,
        traction: Some((top, [0.0, -force / arc_len, 0.0])),
        bcs: bcs(space)?,
    })
}

pub fn solve_at_force(
    space: &Arc<FunctionSpace<f64>>,
    model: &ConstitutiveModel<f64>,
    force: f64,
    arc_len: f64,
    warm: Vec<f64>,
    newton: &NewtonConfig,
) -> Result<Vec<f64>, TrainError> {
    let sys = system(space, model, force, arc_len)?;
    let (u, _) = sys.solve(warm, newton)?;
    Ok(u)
}

/// Solves at `force_to` from a state converged at `force_from`, bisecting the
/// load increment when Newton fails.
pub fn solve_continued(
    space: &Arc<FunctionSpace<f64>>,
    model: &ConstitutiveModel<f64>,
    force_from: f64,
    force_to: f64,
    arc_len: f64,
    warm: Vec<f64>,
    newton: &NewtonConfig,
    depth: usize,
) -> Result<Vec<f64>, TrainError> {
    match solve_at_force(space, model, force_to, arc_len, warm.clone(), newton) {
        Ok(u) => Ok(u),
        Err(TrainError::Solver(_)) if depth > 0 => {
            let mid = 0.5 * (force_from + force_to);
            let u_mid = solve_continued(space, model, force_from, mid, arc_len, warm, newton, depth - 1)?;
            solve_continued(space, model, mid, force_to, arc_len, u_mid, newton, depth - 1)
        }
        Err(e) => Err(e),
    }
}

fn max_displacement_magnitude(space: &FunctionSpace<f64>, u: &[f64]) -> f64 {
    let mut best = 0.0f64;
    for node in 0..space.nnodes {
        let ux = u[space.dof(node, 0)];
        let uy = u[space.dof(node, 1)];
        best = best.max((ux * ux + uy * uy).sqrt());
    }
    best
}

/// Calibrates the peak load so the ground-truth response reaches the target
/// displacement fraction of the diameter (a few fixed-point iterations).
pub fn calibrate_max_force(cfg: &BrazilianConfig) -> Result<f64, TrainError> {
    if cfg.max_force_n_per_m > 0.0 {
        return Ok(cfg.max_force_n_per_m);
    }
    let space = build_space(cfg)?;
    let gt = ground_truth(cfg)?;
    let newton = newton_config(cfg);
    let arc = arc_length(&space)?;
    let target = cfg.target_displacement_fraction * cfg.diameter_m;
    let mut force = cfg.c1_pa * target; // stiffness-scale first guess
    let mut warm = vec![0.0; space.ndof];
    for _ in 0..4 {
        warm = solve_at_force(&space, &gt, force, arc, warm, &newton)?;
        let m = max_displacement_magnitude(&space, &warm);
        let ratio = (target / m).clamp(0.2, 5.0);
        force *= ratio;
    }
    Ok(force)
}

/// Load steps linearly spaced up to the calibrated maximum, interleaved splits.
pub fn loading_program(cfg: &BrazilianConfig, max_force: f64) -> Vec<(f64, Split)> {
    let total = cfg.n_train + cfg.n_test;
    let splits = interleave_splits(cfg.n_train, cfg.n_test);
    (0..total)
        .map(|i| (max_force * (i + 1) as f64 / total as f64, splits[i]))
        .collect()
}

pub fn generate_dataset(cfg: &BrazilianConfig) -> Result<BrazilianDataset, TrainError> {
    let space = build_space(cfg)?;
    let gt = ground_truth(cfg)?;
    let newton = newton_config(cfg);
    let arc = arc_length(&space)?;
    let max_force = calibrate_max_force(cfg)?;
    let program = loading_program(cfg, max_force);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut steps = Vec::with_capacity(program.len());
    let mut warm = vec![0.0; space.ndof];
    for (force, split) in &program {
        warm = solve_at_force(&space, &gt, *force, arc, warm, &newton)?;
        let mut obs = warm.clone();
        apply_relative_noise(&mut obs, cfg.noise_fraction, &mut rng);
        steps.push(BrazilianStep {
            force_n_per_m: *force,
            displacement_clean: warm.clone(),
            displacement_obs: obs,
            split: *split,
        });
    }
    Ok(BrazilianDataset {
        schema_version: CONFIG_SCHEMA_VERSION,
        seed: cfg.seed,
        max_force_n_per_m: max_force,
        arc_length_m: arc,
        steps,
    })
}

/// Training problem with the displacement-field loss.
pub struct BrazilianTrainer {
    pub cfg: BrazilianConfig,
    pub space: Arc<FunctionSpace<f64>>,
    pub model: ConstitutiveModel<f64>,
    arc: f64,
    steps: Vec<BrazilianStep>,
    warm: Vec<Option<(f64, Vec<f64>)>>,
    newton: NewtonConfig,
}

impl BrazilianTrainer {
    pub fn new(cfg: &BrazilianConfig, dataset: &BrazilianDataset, model: ConstitutiveModel<f64>) -> Result<Self, TrainError> {
        let space = build_space(cfg)?;
        Ok(Self {
            cfg: cfg.clone(),
            space,
            model,
            arc: dataset.arc_length_m,
            steps: dataset.steps.clone(),
            warm: vec![None; dataset.steps.len()],
            newton: newton_config(cfg),
        })
    }

    fn solve_with_warm(&mut self, i: usize) -> Result<Vec<f64>, TrainError> {
        let (from, guess) = match &self.warm[i] {
            Some((f, w)) => (*f, w.clone()),
            None => {
                let mut found = None;
                for j in (0..i).rev() {
                    if let Some((f, w)) = &self.warm[j] {
                        found = Some((*f, w.clone()));
                        break;
                    }
                }
                found.unwrap_or((0.0, vec![0.0; self.space.ndof]))
            }
        };
        let target = self.steps[i].force_n_per_m;
        let u = match solve_continued(&self.space, &self.model, from, target, self.arc, guess, &self.newton, 2) {
            Ok(u) => u,
            Err(TrainError::Solver(_)) => solve_continued(
                &self.space,
                &self.model,
                0.0,
                target,
                self.arc,
                vec![0.0; self.space.ndof],
                &self.newton,
                5,
            )?,
            Err(e) => return Err(e),
        };
        self.warm[i] = Some((target, u.clone()));
        Ok(u)
    }

    fn split_loss(&mut self, split: Split, mut grad: Option<&mut [f64]>) -> Result<f64, TrainError> {
        let idx: Vec<usize> =
            (0..self.steps.len()).filter(|&i| self.steps[i].split == split).collect();
        let weight = 1.0 / idx.len() as f64;
        let mut total = 0.0;
        for &i in &idx {
            let u = match self.solve_with_warm(i) {
                Ok(u) => u,
                Err(TrainError::Solver(_)) => {
                    self.warm[i] = None;
                    total += weight * super::uniaxial::STEP_FAILURE_PENALTY;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let obs = Observation::Vector(self.steps[i].displacement_obs.clone());
            let fem = Observation::Vector(u.clone());
            total += weight
                * match (&fem, &obs) {
                    (Observation::Vector(f), Observation::Vector(o)) => {
                        let mut num = 0.0;
                        let mut den = 0.0;
                        for (a, b) in f.iter().zip(o) {
                            num += (a - b) * (a - b);
                            den += b * b;
                        }
                        num.sqrt() / den.sqrt()
                    }
                    _ => unreachable!(),
                };
            if let Some(acc) = grad.as_deref_mut() {
                let dldu = match step_loss_gradient(&fem, &obs, weight, i)? {
                    Observation::Vector(v) => v,
                    _ => unreachable!(),
                };
                let sys = system(&self.space, &self.model, self.steps[i].force_n_per_m, self.arc)?;
                grad_static(&sys, &u, Some(&dldu), None, acc)?;
            }
        }
        Ok(total)
    }

    /// Displacement field at a given load with the current model (used for
    /// deformed-shape outputs and acceptance checks).
    pub fn solve_field(&mut self, force: f64) -> Result<Vec<f64>, TrainError> {
        let (from, guess) = self
            .warm
            .iter()
            .rev()
            .flatten()
            .next()
            .cloned()
            .unwrap_or((0.0, vec![0.0; self.space.ndof]));
        solve_continued(&self.space, &self.model, from, force, self.arc, guess, &self.newton, 4)
    }
}

impl TrainProblem<f64> for BrazilianTrainer {
    fn params(&self) -> Vec<f64> {
        self.model.params_flat()
    }

    fn set_params(&mut self, p: &[f64]) -> Result<(), TrainError> {
        self.model.set_params_flat(p)?;
        Ok(())
    }

    fn train_loss_and_grad(&mut self) -> Result<(f64, Vec<f64>), TrainError> {
        let mut grad = vec![0.0; self.model.param_count()];
        let loss = self.split_loss(Split::Train, Some(&mut grad))?;
        Ok((loss, grad))
    }

    fn test_loss(&mut self) -> Result<f64, TrainError> {
        self.split_loss(Split::Test, None)
    }
}

/// Boundary deformation rows (x, y, ux, uy) for one displacement field.
pub fn boundary_deformation(space: &Arc<FunctionSpace<f64>>, u: &[f64]) -> Vec<[f64; 4]> {
    let mut rows = Vec::new();
    let mut nodes = Vec::new();
    for (tag, _) in space.mesh.legend.iter() {
        if tag < 100 {
            if let Ok(mut ns) = space.nodes_on_tag(tag) {
                nodes.append(&mut ns);
            }
        }
    }
    nodes.sort_unstable();
    nodes.dedup();
    for n in nodes {
        let x = space.node_coords[n];
        rows.push([x[0], x[1], u[space.dof(n, 0)], u[space.dof(n, 1)]]);
    }
    rows
}
