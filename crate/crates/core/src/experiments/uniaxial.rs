//! Displacement-controlled uniaxial compression: a rectangular sample with a
//! fixed bottom and prescribed top displacement; the network learns the
//! softening Young's modulus from noisy load observations.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::config::{interleave_splits, Split, UniaxialConfig, CONFIG_SCHEMA_VERSION};
use crate::adjoint::{grad_static, step_loss_gradient, BoundaryForceFunctional, Observation};
use crate::assembly::{reaction_force, DirichletBC, ElasticitySystem, NewtonConfig};
use crate::constitutive::{stress_net_config, ConstitutiveModel, SymTensor};
use crate::fespace::{interpolate, FunctionSpace, ValueShape};
use crate::mesh::generate_rectangle;
use crate::neural::MlpParams;
use crate::train::{apply_relative_noise, TrainError, TrainProblem};

/// Relative-loss penalty for a train/test step whose forward solve found no
/// equilibrium under the current parameters.
pub const STEP_FAILURE_PENALTY: f64 = 10.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UniaxialStep {
    pub u_bar_m: f64,
    pub force_clean_n: f64,
    pub force_obs_n: f64,
    pub split: Split,
}

/// Synthetic displacement-controlled dataset plus representative strain states
/// spanning the visited trace range (used for law-recovery diagnostics).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UniaxialDataset {
    pub schema_version: u32,
    pub seed: u64,
    pub steps: Vec<UniaxialStep>,
    pub strain_samples: Vec<[f64; 3]>,
}

pub fn build_space(cfg: &UniaxialConfig) -> Result<Arc<FunctionSpace<f64>>, TrainError> {
    let mesh = generate_rectangle(cfg.width_m, cfg.height_m, cfg.nx, cfg.ny)?;
    Ok(FunctionSpace::build(Arc::new(mesh), cfg.element_degree, ValueShape::Vector)?)
}

pub fn newton_config(cfg: &UniaxialConfig) -> NewtonConfig {
    NewtonConfig {
        abs_tol: cfg.newton_abs_tol,
        rel_tol: 1e-14,
        max_iter: cfg.newton_max_iter,
        ls_max_steps: 20,
        stall_rel_tol: 1e-6,
        ..Default::default()
    }
}

/// Prescribed displacements, linearly spaced over (0, max], with interleaved
/// train/test membership.
pub fn loading_program(cfg: &UniaxialConfig) -> Vec<(f64, Split)> {
    let total = cfg.n_train + cfg.n_test;
    let splits = interleave_splits(cfg.n_train, cfg.n_test);
    (0..total)
        .map(|i| {
            let u = -cfg.max_compression_m * (i + 1) as f64 / total as f64;
            (u, splits[i])
        })
        .collect()
}

pub fn ground_truth(cfg: &UniaxialConfig) -> Result<ConstitutiveModel<f64>, TrainError> {
    Ok(ConstitutiveModel::ground_truth_softening(cfg.c1_pa, cfg.c2, cfg.nu)?)
}

/// Fresh network initialized near the constant law E = output_scale: damped
/// random weights plus an output bias at softplus^-1(1). Random unbiased inits
/// produce laws with negative-tangent zones that the static solves cannot
/// equilibrate.
pub fn fresh_model(cfg: &UniaxialConfig) -> Result<ConstitutiveModel<f64>, TrainError> {
    let mut mlp = MlpParams::init(stress_net_config(&cfg.hidden_widths), cfg.seed);
    mlp.scale_output_weights(0.1);
    mlp.set_output_level(1.0);
    Ok(ConstitutiveModel::neural_isotropic_e(
        mlp,
        cfg.nu,
        cfg.strain_input_scale,
        cfg.modulus_output_scale_pa,
    )?)
}

pub fn clamp_bcs(space: &Arc<FunctionSpace<f64>>, u_bar: f64) -> Result<Vec<DirichletBC<f64>>, TrainError> {
    let bottom = space.mesh.legend.tag("bottom").expect("bottom tag");
    let top = space.mesh.legend.tag("top").expect("top tag");
    Ok(vec![
        DirichletBC::vector_on_tag(space, bottom, |_, out| {
            out[0] = 0.0;
            out[1] = 0.0;
        })?,
        DirichletBC::vector_on_tag(space, top, move |_, out| {
            out[0] = 0.0;
            out[1] = u_bar;
        })?,
    ])
}

/// Solves one displacement step starting from `warm`.
pub fn solve_step(
    space: &Arc<FunctionSpace<f64>>,
    model: &ConstitutiveModel<f64>,
    u_bar: f64,
    warm: Vec<f64>,
    newton: &NewtonConfig,
) -> Result<Vec<f64>, TrainError> {
    let sys = ElasticitySystem { space: space.clone(), model, traction: None, bcs: clamp_bcs(space, u_bar)? };
    let (u, _) = sys.solve(warm, newton)?;
    Ok(u)
}

/// Solves at `u_bar_to` from a warm state converged at `u_bar_from`, bisecting
/// the load increment when Newton fails.
pub fn solve_step_continued(
    space: &Arc<FunctionSpace<f64>>,
    model: &ConstitutiveModel<f64>,
    u_bar_from: f64,
    u_bar_to: f64,
    warm: Vec<f64>,
    newton: &NewtonConfig,
    depth: usize,
) -> Result<Vec<f64>, TrainError> {
    match solve_step(space, model, u_bar_to, warm.clone(), newton) {
        Ok(u) => Ok(u),
        Err(TrainError::Solver(_)) if depth > 0 => {
            let mid = 0.5 * (u_bar_from + u_bar_to);
            let u_mid = solve_step_continued(space, model, u_bar_from, mid, warm, newton, depth - 1)?;
            solve_step_continued(space, model, mid, u_bar_to, u_mid, newton, depth - 1)
        }
        Err(e) => Err(e),
    }
}

/// Ramp initial guess compatible with the clamped boundary conditions.
pub fn ramp_guess(space: &Arc<FunctionSpace<f64>>, u_bar: f64, height: f64) -> Vec<f64> {
    interpolate(space, |x, out| {
        out[0] = 0.0;
        out[1] = u_bar * x[1] / height;
    })
    .dofs
}

/// Top-boundary vertical reaction.
pub fn top_force(
    space: &Arc<FunctionSpace<f64>>,
    model: &ConstitutiveModel<f64>,
    u: &[f64],
) -> Result<f64, TrainError> {
    let top = space.mesh.legend.tag("top").expect("top tag");
    Ok(reaction_force(space, model, u, top, [0.0, 1.0, 0.0])?)
}

/// Runs the ground-truth model through the loading program and packages noisy
/// observations. Also records representative strain states across the sweep.
pub fn generate_dataset(cfg: &UniaxialConfig) -> Result<UniaxialDataset, TrainError> {
    let space = build_space(cfg)?;
    let gt = ground_truth(cfg)?;
    let newton = newton_config(cfg);
    let program = loading_program(cfg);
    let mut steps = Vec::with_capacity(program.len());
    let mut warm = ramp_guess(&space, program[0].0, cfg.height_m);
    let mut visited: Vec<(f64, [f64; 3])> = Vec::new();
    for (u_bar, split) in &program {
        warm = solve_step(&space, &gt, *u_bar, warm, &newton)?;
        let force = top_force(&space, &gt, &warm)?;
        collect_strain_states(&space, &warm, &mut visited);
        steps.push(UniaxialStep { u_bar_m: *u_bar, force_clean_n: force, force_obs_n: force, split: *split });
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut forces: Vec<f64> = steps.iter().map(|s| s.force_clean_n).collect();
    apply_relative_noise(&mut forces, cfg.noise_fraction, &mut rng);
    for (s, f) in steps.iter_mut().zip(&forces) {
        s.force_obs_n = *f;
    }
    Ok(UniaxialDataset {
        schema_version: CONFIG_SCHEMA_VERSION,
        seed: cfg.seed,
        steps,
        strain_samples: representative_states(visited, 20),
    })
}

/// Per-quadrature-point strain states of a solved displacement field.
fn collect_strain_states(space: &Arc<FunctionSpace<f64>>, u: &[f64], out: &mut Vec<(f64, [f64; 3])>) {
    let dim = space.mesh.dim;
    let rule = space.cell_rule(2 * space.degree);
    let tab = space.tabulate(&rule.points);
    let nb = tab.n_basis;
    for c in 0..space.n_cells() {
        let geo = space.geometry(c);
        let nodes = space.cell_node_ids(c);
        for q in 0..rule.len() {
            let mut grad = [[0.0f64; 3]; 3];
            for (b, &node) in nodes.iter().enumerate() {
                let gref = &tab.grads[(q * nb + b) * dim..(q * nb + b) * dim + dim];
                let mut g = [0.0; 3];
                for r in 0..dim {
                    for (cc, gr) in gref.iter().enumerate() {
                        g[r] += geo.inv_t[r][cc] * gr;
                    }
                }
                for comp in 0..dim {
                    let coeff = u[space.dof(node, comp)];
                    for r in 0..dim {
                        grad[comp][r] += coeff * g[r];
                    }
                }
            }
            let voigt = [grad[0][0], grad[1][1], grad[0][1] + grad[1][0]];
            out.push((voigt[0] + voigt[1], voigt));
        }
    }
}

/// Bins the visited states by trace between the 10% and 90% quantiles (the
/// bulk of the data; clamped-corner concentrations fall outside) and keeps one
/// representative per bin.
fn representative_states(mut visited: Vec<(f64, [f64; 3])>, count: usize) -> Vec<[f64; 3]> {
    visited.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let n = visited.len();
    if n == 0 {
        return Vec::new();
    }
    let lo = n * 10 / 100;
    let hi = (n * 90 / 100).max(lo + 1).min(n);
    let window = &visited[lo..hi];
    let m = window.len();
    (0..count)
        .map(|k| {
            let idx = (k * m + m / (2 * count)) / count;
            window[idx.min(m - 1)].1
        })
        .collect()
}

/// Training problem: forward solves plus force-loss adjoints over the train
/// split; the test split is only ever read by `test_loss`.
pub struct UniaxialTrainer {
    pub cfg: UniaxialConfig,
    pub space: Arc<FunctionSpace<f64>>,
    pub model: ConstitutiveModel<f64>,
    steps: Vec<UniaxialStep>,
    warm: Vec<Option<(f64, Vec<f64>)>>,
    newton: NewtonConfig,
}

impl UniaxialTrainer {
    pub fn new(cfg: &UniaxialConfig, dataset: &UniaxialDataset, model: ConstitutiveModel<f64>) -> Result<Self, TrainError> {
        let space = build_space(cfg)?;
        Ok(Self {
            cfg: cfg.clone(),
            space,
            model,
            steps: dataset.steps.clone(),
            warm: vec![None; dataset.steps.len()],
            newton: newton_config(cfg),
        })
    }

    fn solve_with_warm(&mut self, i: usize) -> Result<Vec<f64>, TrainError> {
        // warmest available state: this step's previous solution, else the
        // nearest already-solved smaller step, else a ramp guess
        let (from, guess) = match &self.warm[i] {
            Some((ub, w)) => (*ub, w.clone()),
            None => {
                let mut found = None;
                for j in (0..i).rev() {
                    if let Some((ub, w)) = &self.warm[j] {
                        found = Some((*ub, w.clone()));
                        break;
                    }
                }
                found.unwrap_or_else(|| {
                    let first = self.steps[i].u_bar_m;
                    (first, ramp_guess(&self.space, first, self.cfg.height_m))
                })
            }
        };
        let target = self.steps[i].u_bar_m;
        let u = match solve_step_continued(&self.space, &self.model, from, target, guess, &self.newton, 2) {
            Ok(u) => u,
            // warm path failed (e.g. the law changed too much): cold restart
            // with load continuation from the unloaded state
            Err(TrainError::Solver(_)) => solve_step_continued(
                &self.space,
                &self.model,
                0.0,
                target,
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
        let top = self.space.mesh.legend.tag("top").expect("top tag");
        for &i in &idx {
            let u = match self.solve_with_warm(i) {
                Ok(u) => u,
                // an intermediate law can have no static equilibrium at this
                // load; score the step with a flat penalty and no gradient so
                // the remaining steps pull the parameters back
                Err(TrainError::Solver(_)) => {
                    self.warm[i] = None;
                    total += weight * STEP_FAILURE_PENALTY;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let f = top_force(&self.space, &self.model, &u)?;
            let obs = Observation::Scalar(self.steps[i].force_obs_n);
            let fem = Observation::Scalar(f);
            total += weight * (f - self.steps[i].force_obs_n).abs() / self.steps[i].force_obs_n.abs();
            if let Some(acc) = grad.as_deref_mut() {
                let dl_df = match step_loss_gradient(&fem, &obs, weight, i)? {
                    Observation::Scalar(v) => v,
                    _ => unreachable!(),
                };
                let sys = ElasticitySystem {
                    space: self.space.clone(),
                    model: &self.model,
                    traction: None,
                    bcs: clamp_bcs(&self.space, self.steps[i].u_bar_m)?,
                };
                grad_static(
                    &sys,
                    &u,
                    None,
                    Some(&BoundaryForceFunctional { tag: top, direction: [0.0, 1.0, 0.0], dl_df }),
                    acc,
                )?;
            }
        }
        Ok(total)
    }
}

impl TrainProblem<f64> for UniaxialTrainer {
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

/// Force-displacement curve of a model over a dense displacement grid
/// (sequential warm-started solves).
pub fn force_displacement_curve(
    cfg: &UniaxialConfig,
    model: &ConstitutiveModel<f64>,
    n_points: usize,
) -> Result<Vec<(f64, f64)>, TrainError> {
    let space = build_space(cfg)?;
    let newton = newton_config(cfg);
    let mut out = Vec::with_capacity(n_points);
    let mut warm = ramp_guess(&space, -cfg.max_compression_m / n_points as f64, cfg.height_m);
    for i in 1..=n_points {
        let u_bar = -cfg.max_compression_m * i as f64 / n_points as f64;
        warm = solve_step(&space, model, u_bar, warm, &newton)?;
        out.push((u_bar, top_force(&space, model, &warm)?));
    }
    Ok(out)
}

/// Learned vs ground-truth modulus at the dataset's representative strain states.
pub fn modulus_comparison(
    cfg: &UniaxialConfig,
    dataset: &UniaxialDataset,
    model: &ConstitutiveModel<f64>,
) -> Result<Vec<(f64, f64, f64)>, TrainError> {
    let gt = ground_truth(cfg)?;
    let mut rows = Vec::with_capacity(dataset.strain_samples.len());
    for v in &dataset.strain_samples {
        let eps = SymTensor::from_voigt(2, v);
        let e_model = model.isotropic_modulus(&eps)?;
        let e_truth = gt.isotropic_modulus(&eps)?;
        rows.push((eps.trace(), e_model, e_truth));
    }
    Ok(rows)
}
