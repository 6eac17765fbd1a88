//! Transient heat conduction on the copper/sample assembly: a fluctuating
//! boundary temperature drives the copper disc, the sample plate's
//! temperature-dependent conductivity is learned from its noisy temperature
//! fields.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::config::{ThermalConfig, CONFIG_SCHEMA_VERSION};
use crate::adjoint::{grad_transient, step_loss_gradient, Observation, TransientAdjointInput};
use crate::assembly::{ConductivityMap, DirichletBC, HeatStepSystem, NewtonConfig, ThermalProps};
use crate::constitutive::{conductivity_net_config, ConstitutiveModel};
use crate::fespace::{FunctionSpace, ValueShape};
use crate::mesh::{extrude_tiered, generate_thermal_footprint};
use crate::neural::MlpParams;
use crate::train::{apply_relative_noise, TrainError, TrainProblem};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThermalDataset {
    pub schema_version: u32,
    pub seed: u64,
    /// Scalar node ids of the sample region (observation points).
    pub obs_node_ids: Vec<usize>,
    pub train_boundary_temps_k: Vec<f64>,
    pub test_boundary_temps_k: Vec<f64>,
    pub train_obs_clean: Vec<Vec<f64>>,
    pub train_obs_noisy: Vec<Vec<f64>>,
    pub test_obs_clean: Vec<Vec<f64>>,
    pub test_obs_noisy: Vec<Vec<f64>>,
    /// 2%..98% quantile range of sample-region temperatures over the training
    /// trajectory.
    pub temperature_range_k: [f64; 2],
}

pub fn build_space(cfg: &ThermalConfig) -> Result<Arc<FunctionSpace<f64>>, TrainError> {
    let footprint = generate_thermal_footprint(
        cfg.disc_diameter_m,
        cfg.hole_diameter_m,
        cfg.square_edge_m,
        cfg.footprint_resolution,
        cfg.left_arc_half_angle_deg,
    )?;
    let copper = footprint.legend.tag("copper").expect("copper tag");
    let sample = footprint.legend.tag("sample").expect("sample tag");
    let mut layers = std::collections::BTreeMap::new();
    layers.insert(copper, cfg.copper_layers);
    layers.insert(sample, cfg.sample_layers);
    let mesh = extrude_tiered(&footprint, cfg.layer_height_m, &layers)?;
    Ok(FunctionSpace::build(Arc::new(mesh), cfg.element_degree, ValueShape::Scalar)?)
}

pub fn newton_config(cfg: &ThermalConfig) -> NewtonConfig {
    NewtonConfig {
        abs_tol: cfg.newton_abs_tol,
        rel_tol: 1e-14,
        max_iter: cfg.newton_max_iter,
        ls_max_steps: 12,
        ..Default::default()
    }
}

pub fn thermal_props(cfg: &ThermalConfig, space: &FunctionSpace<f64>) -> ThermalProps<f64> {
    let copper = space.mesh.legend.tag("copper").expect("copper tag");
    let sample = space.mesh.legend.tag("sample").expect("sample tag");
    let mut props = ThermalProps::new();
    props.insert(copper, (cfg.copper_density_kg_m3, cfg.copper_specific_heat));
    props.insert(sample, (cfg.sample_density_kg_m3, cfg.sample_specific_heat));
    props
}

/// Copper keeps its known constant conductivity (beta = 0 reduces the law to
/// the constant k_r).
pub fn copper_model(cfg: &ThermalConfig) -> Result<ConstitutiveModel<f64>, TrainError> {
    Ok(ConstitutiveModel::ground_truth_conductivity(cfg.copper_conductivity, 0.0, 1.0, cfg.t_r_kelvin)?)
}

pub fn sample_ground_truth(cfg: &ThermalConfig) -> Result<ConstitutiveModel<f64>, TrainError> {
    Ok(ConstitutiveModel::ground_truth_conductivity(cfg.k_r, cfg.beta, cfg.delta, cfg.t_r_kelvin)?)
}

pub fn fresh_model(cfg: &ThermalConfig) -> Result<ConstitutiveModel<f64>, TrainError> {
    let mlp = MlpParams::init(conductivity_net_config(&cfg.hidden_widths), cfg.seed);
    Ok(ConstitutiveModel::neural_conductivity(mlp, cfg.k_min, cfg.k_max, cfg.t_offset_k, cfg.t_scale_k)?)
}

fn conductivity_map<'a>(
    space: &FunctionSpace<f64>,
    copper: &'a ConstitutiveModel<f64>,
    sample: &'a ConstitutiveModel<f64>,
) -> ConductivityMap<'a, f64> {
    let copper_tag = space.mesh.legend.tag("copper").expect("copper tag");
    let sample_tag = space.mesh.legend.tag("sample").expect("sample tag");
    let mut map = ConductivityMap::new();
    map.insert(copper_tag, copper);
    map.insert(sample_tag, sample);
    map
}

/// Boundary temperature program: amplitude grows linearly over the horizon
/// while oscillating with the given period and phase.
pub fn boundary_temps(cfg: &ThermalConfig, period_s: f64, phase_rad: f64) -> Vec<f64> {
    let horizon = cfg.dt_s * cfg.n_steps as f64;
    (1..=cfg.n_steps)
        .map(|n| {
            let t = cfg.dt_s * n as f64;
            let amp = cfg.amplitude_k * t / horizon;
            let osc = (2.0 * std::f64::consts::PI * t / period_s + phase_rad).sin();
            cfg.initial_temperature_k + amp * (1.0 + osc) / 2.0
        })
        .collect()
}

/// Scalar node ids of cells in the sample region, sorted.
pub fn sample_region_nodes(space: &FunctionSpace<f64>) -> Vec<usize> {
    let sample = space.mesh.legend.tag("sample").expect("sample tag");
    let mut nodes = Vec::new();
    for c in 0..space.n_cells() {
        if space.mesh.region_tags[c] == sample {
            nodes.extend_from_slice(space.cell_node_ids(c));
        }
    }
    nodes.sort_unstable();
    nodes.dedup();
    nodes
}

pub fn step_bcs(space: &Arc<FunctionSpace<f64>>, boundary_temp: f64) -> Result<Vec<DirichletBC<f64>>, TrainError> {
    let left = space.mesh.legend.tag("left_arc").expect("left_arc tag");
    Ok(vec![DirichletBC::component_on_tag(space, left, 0, |_| boundary_temp)?])
}

/// Runs the implicit-Euler trajectory; `warm` (if given) provides per-step
/// initial Newton guesses from a previous run of the same program.
pub fn run_trajectory(
    space: &Arc<FunctionSpace<f64>>,
    cfg: &ThermalConfig,
    props: &ThermalProps<f64>,
    models: &ConductivityMap<'_, f64>,
    temps: &[f64],
    warm: Option<&[Vec<f64>]>,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<DirichletBC<f64>>>), TrainError> {
    let newton = newton_config(cfg);
    let mut trajectory = vec![vec![cfg.initial_temperature_k; space.ndof]];
    let mut bcs_per_step = Vec::with_capacity(temps.len());
    for (n, &tb) in temps.iter().enumerate() {
        let bcs = step_bcs(space, tb)?;
        let sys = HeatStepSystem {
            space: space.clone(),
            props,
            models,
            t_old: trajectory.last().unwrap().clone(),
            dt: cfg.dt_s,
            bcs: bcs.clone(),
        };
        let guess = warm
            .and_then(|w| w.get(n + 1).cloned())
            .unwrap_or_else(|| trajectory.last().unwrap().clone());
        let (t, _) = sys.solve(guess, &newton)?;
        trajectory.push(t);
        bcs_per_step.push(bcs);
    }
    Ok((trajectory, bcs_per_step))
}

fn restrict(values: &[f64], nodes: &[usize]) -> Vec<f64> {
    nodes.iter().map(|&n| values[n]).collect()
}

pub fn generate_dataset(cfg: &ThermalConfig) -> Result<ThermalDataset, TrainError> {
    let space = build_space(cfg)?;
    let props = thermal_props(cfg, &space);
    let copper = copper_model(cfg)?;
    let gt = sample_ground_truth(cfg)?;
    let models = conductivity_map(&space, &copper, &gt);
    let obs_nodes = sample_region_nodes(&space);

    let train_temps = boundary_temps(cfg, cfg.train_period_s, 0.0);
    let test_temps = boundary_temps(cfg, cfg.test_period_s, cfg.test_phase_rad);
    let (train_traj, _) = run_trajectory(&space, cfg, &props, &models, &train_temps, None)?;
    let (test_traj, _) = run_trajectory(&space, cfg, &props, &models, &test_temps, None)?;

    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let clean_of = |traj: &[Vec<f64>]| -> Vec<Vec<f64>> {
        traj[1..].iter().map(|t| restrict(t, &obs_nodes)).collect()
    };
    let train_clean = clean_of(&train_traj);
    let test_clean = clean_of(&test_traj);
    let mut train_noisy = train_clean.clone();
    for step in train_noisy.iter_mut() {
        apply_relative_noise(step, cfg.noise_fraction, &mut rng);
    }
    let mut test_noisy = test_clean.clone();
    for step in test_noisy.iter_mut() {
        apply_relative_noise(step, cfg.noise_fraction, &mut rng);
    }

    // visited sample-region temperature range (2%..98% quantiles)
    let mut visited: Vec<f64> = train_clean.iter().flatten().copied().collect();
    visited.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = visited[visited.len() * 2 / 100];
    let hi = visited[(visited.len() * 98 / 100).min(visited.len() - 1)];

    Ok(ThermalDataset {
        schema_version: CONFIG_SCHEMA_VERSION,
        seed: cfg.seed,
        obs_node_ids: obs_nodes,
        train_boundary_temps_k: train_temps,
        test_boundary_temps_k: test_temps,
        train_obs_clean: train_clean,
        train_obs_noisy: train_noisy,
        test_obs_clean: test_clean,
        test_obs_noisy: test_noisy,
        temperature_range_k: [lo, hi],
    })
}

/// Training problem: transient forward sweeps plus the reverse-mode adjoint.
pub struct ThermalTrainer {
    pub cfg: ThermalConfig,
    pub space: Arc<FunctionSpace<f64>>,
    pub model: ConstitutiveModel<f64>,
    copper: ConstitutiveModel<f64>,
    props: ThermalProps<f64>,
    dataset: ThermalDataset,
    warm_train: Option<Vec<Vec<f64>>>,
    warm_test: Option<Vec<Vec<f64>>>,
}

impl ThermalTrainer {
    pub fn new(cfg: &ThermalConfig, dataset: &ThermalDataset, model: ConstitutiveModel<f64>) -> Result<Self, TrainError> {
        let space = build_space(cfg)?;
        if dataset.obs_node_ids.iter().any(|&n| n >= space.nnodes) {
            return Err(TrainError::InvalidConfig(
                "dataset observation nodes do not match the mesh".into(),
            ));
        }
        Ok(Self {
            cfg: cfg.clone(),
            space: space.clone(),
            model,
            copper: copper_model(cfg)?,
            props: thermal_props(cfg, &space),
            dataset: dataset.clone(),
            warm_train: None,
            warm_test: None,
        })
    }

    fn sweep(
        &mut self,
        train_split: bool,
        want_grad: bool,
        acc: Option<&mut [f64]>,
    ) -> Result<f64, TrainError> {
        let temps = if train_split {
            self.dataset.train_boundary_temps_k.clone()
        } else {
            self.dataset.test_boundary_temps_k.clone()
        };
        let obs = if train_split { &self.dataset.train_obs_noisy } else { &self.dataset.test_obs_noisy };
        let models = conductivity_map(&self.space, &self.copper, &self.model);
        let warm = if train_split { self.warm_train.as_deref() } else { self.warm_test.as_deref() };
        let (traj, bcs_per_step) = run_trajectory(&self.space, &self.cfg, &self.props, &models, &temps, warm)?;

        let n_steps = temps.len();
        let weight = 1.0 / n_steps as f64;
        let mut total = 0.0;
        let mut dldt: Vec<Option<Vec<f64>>> = Vec::with_capacity(n_steps);
        for n in 0..n_steps {
            let fem = restrict(&traj[n + 1], &self.dataset.obs_node_ids);
            let fem_obs = Observation::Vector(fem);
            let data = Observation::Vector(obs[n].clone());
            // loss value
            if let (Observation::Vector(f), Observation::Vector(o)) = (&fem_obs, &data) {
                let mut num = 0.0;
                let mut den = 0.0;
                for (a, b) in f.iter().zip(o) {
                    num += (a - b) * (a - b);
                    den += b * b;
                }
                total += weight * num.sqrt() / den.sqrt();
            }
            if want_grad {
                let g = match step_loss_gradient(&fem_obs, &data, weight, n)? {
                    Observation::Vector(v) => v,
                    _ => unreachable!(),
                };
                let mut full = vec![0.0; self.space.ndof];
                for (k, &node) in self.dataset.obs_node_ids.iter().enumerate() {
                    full[node] = g[k];
                }
                dldt.push(Some(full));
            }
        }
        if want_grad {
            let acc = acc.expect("gradient accumulator");
            grad_transient(
                &TransientAdjointInput {
                    space: &self.space,
                    props: &self.props,
                    models: &models,
                    dt: self.cfg.dt_s,
                    trajectory: &traj,
                    bcs_per_step: &bcs_per_step,
                    dldt: &dldt,
                },
                acc,
            )?;
        }
        if train_split {
            self.warm_train = Some(traj);
        } else {
            self.warm_test = Some(traj);
        }
        Ok(total)
    }

    /// Conductivity curve of the current model vs ground truth over the
    /// visited temperature range.
    pub fn conductivity_comparison(&self, n_points: usize) -> Result<Vec<(f64, f64, f64)>, TrainError> {
        let gt = sample_ground_truth(&self.cfg)?;
        let [lo, hi] = self.dataset.temperature_range_k;
        let mut rows = Vec::with_capacity(n_points);
        for i in 0..n_points {
            let t = lo + (hi - lo) * i as f64 / (n_points - 1).max(1) as f64;
            rows.push((t, self.model.conductivity(t)?, gt.conductivity(t)?));
        }
        Ok(rows)
    }
}

impl TrainProblem<f64> for ThermalTrainer {
    fn params(&self) -> Vec<f64> {
        self.model.params_flat()
    }

    fn set_params(&mut self, p: &[f64]) -> Result<(), TrainError> {
        self.model.set_params_flat(p)?;
        Ok(())
    }

    fn train_loss_and_grad(&mut self) -> Result<(f64, Vec<f64>), TrainError> {
        let mut grad = vec![0.0; self.model.param_count()];
        let loss = self.sweep(true, true, Some(&mut grad))?;
        Ok((loss, grad))
    }

    fn test_loss(&mut self) -> Result<f64, TrainError> {
        self.sweep(false, false, None)
    }
}
