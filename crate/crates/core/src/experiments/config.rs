//! Experiment configurations: JSON with a schema-version field; physical
//! quantities carry SI unit suffixes in their key names.

use serde::{Deserialize, Serialize};

use crate::train::{AdamConfig, TrainError};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

fn default_schema_version() -> u32 {
    CONFIG_SCHEMA_VERSION
}

/// Split membership of a dataset step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Interleaves test steps between training steps: test at slots 1, 3, 5, ...
pub fn interleave_splits(n_train: usize, n_test: usize) -> Vec<Split> {
    let total = n_train + n_test;
    let mut splits = vec![Split::Train; total];
    let mut placed = 0;
    let mut k = 1;
    while placed < n_test && k < total {
        splits[k] = Split::Test;
        placed += 1;
        k += 2;
    }
    // overflow (more test than odd slots) fills from the back
    let mut k = total;
    while placed < n_test {
        k -= 1;
        if splits[k] == Split::Train {
            splits[k] = Split::Test;
            placed += 1;
        }
    }
    splits
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniaxialConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub seed: u64,
    pub width_m: f64,
    pub height_m: f64,
    pub nx: usize,
    pub ny: usize,
    pub element_degree: usize,
    pub max_compression_m: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub c1_pa: f64,
    pub c2: f64,
    pub nu: f64,
    pub noise_fraction: f64,
    pub epochs: usize,
    pub checkpoint_epochs: Vec<usize>,
    pub hidden_widths: Vec<usize>,
    pub strain_input_scale: f64,
    pub modulus_output_scale_pa: f64,
    pub adam: AdamConfig,
    pub newton_abs_tol: f64,
    pub newton_max_iter: usize,
}

impl Default for UniaxialConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: 7,
            width_m: 0.05,
            height_m: 0.10,
            nx: 3,
            ny: 6,
            element_degree: 3,
            max_compression_m: 2e-3,
            n_train: 6,
            n_test: 4,
            c1_pa: 1e9,
            c2: 500.0,
            nu: 0.3,
            noise_fraction: 0.01,
            epochs: 200,
            checkpoint_epochs: vec![10, 20, 200],
            hidden_widths: vec![30, 30, 30],
            strain_input_scale: 100.0,
            modulus_output_scale_pa: 1e9,
            adam: AdamConfig::default(),
            newton_abs_tol: 1e-3,
            newton_max_iter: 80,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrazilianConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub seed: u64,
    pub diameter_m: f64,
    pub rings: usize,
    pub arc_half_angle_deg: f64,
    pub element_degree: usize,
    /// Maximum applied load per unit thickness; 0 = calibrate so the largest
    /// displacement is `target_displacement_fraction * diameter`.
    pub max_force_n_per_m: f64,
    pub target_displacement_fraction: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub c1_pa: f64,
    pub c2: f64,
    pub noise_fraction: f64,
    pub epochs: usize,
    pub checkpoint_epochs: Vec<usize>,
    pub hidden_widths: Vec<usize>,
    pub strain_input_scale: f64,
    pub modulus_output_scale_pa: f64,
    pub adam: AdamConfig,
    pub newton_abs_tol: f64,
    pub newton_max_iter: usize,
}

impl Default for BrazilianConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: 11,
            diameter_m: 0.10,
            rings: 5,
            arc_half_angle_deg: 10.0,
            element_degree: 3,
            max_force_n_per_m: 0.0,
            target_displacement_fraction: 0.005,
            n_train: 4,
            n_test: 3,
            c1_pa: 1e9,
            c2: 500.0,
            noise_fraction: 0.01,
            epochs: 100,
            checkpoint_epochs: vec![10, 100],
            hidden_widths: vec![30, 30, 30],
            strain_input_scale: 100.0,
            modulus_output_scale_pa: 1e9,
            adam: AdamConfig::default(),
            newton_abs_tol: 1e-3,
            newton_max_iter: 80,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TorsionConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub seed: u64,
    pub width_m: f64,
    pub height_m: f64,
    pub hole_diameter_m: f64,
    pub thickness_m: f64,
    pub footprint_resolution: usize,
    pub layers: usize,
    pub element_degree: usize,
    /// Paper text says 2 degrees; the figure caption says 0.5. Default 2,
    /// overridable here.
    pub rotation_deg: f64,
    pub c1_pa: f64,
    pub c2: f64,
    pub newton_abs_tol: f64,
    pub newton_max_iter: usize,
}

impl Default for TorsionConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: 13,
            width_m: 0.5,
            height_m: 1.0,
            hole_diameter_m: 0.2,
            thickness_m: 0.025,
            footprint_resolution: 1,
            layers: 1,
            element_degree: 2,
            rotation_deg: 2.0,
            c1_pa: 1e9,
            c2: 500.0,
            newton_abs_tol: 1e-3,
            newton_max_iter: 60,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub seed: u64,
    pub disc_diameter_m: f64,
    pub hole_diameter_m: f64,
    pub square_edge_m: f64,
    pub footprint_resolution: usize,
    pub left_arc_half_angle_deg: f64,
    pub layer_height_m: f64,
    pub copper_layers: usize,
    pub sample_layers: usize,
    pub element_degree: usize,
    pub n_steps: usize,
    pub dt_s: f64,
    pub initial_temperature_k: f64,
    /// Excitation amplitude reached at the end of the horizon.
    pub amplitude_k: f64,
    pub train_period_s: f64,
    pub test_period_s: f64,
    pub test_phase_rad: f64,
    pub copper_density_kg_m3: f64,
    pub copper_specific_heat: f64,
    pub copper_conductivity: f64,
    pub sample_density_kg_m3: f64,
    pub sample_specific_heat: f64,
    pub k_r: f64,
    pub beta: f64,
    pub delta: f64,
    pub t_r_kelvin: f64,
    pub noise_fraction: f64,
    pub epochs: usize,
    pub checkpoint_epochs: Vec<usize>,
    pub hidden_widths: Vec<usize>,
    pub k_min: f64,
    pub k_max: f64,
    pub t_offset_k: f64,
    pub t_scale_k: f64,
    pub adam: AdamConfig,
    pub newton_abs_tol: f64,
    pub newton_max_iter: usize,
}

impl Default for ThermalConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: 17,
            disc_diameter_m: 0.10,
            hole_diameter_m: 0.05,
            square_edge_m: 0.05,
            footprint_resolution: 1,
            left_arc_half_angle_deg: 30.0,
            layer_height_m: 0.001,
            copper_layers: 4,
            sample_layers: 3,
            element_degree: 1,
            n_steps: 12,
            dt_s: 50.0,
            initial_temperature_k: 300.0,
            amplitude_k: 150.0,
            train_period_s: 300.0,
            test_period_s: 210.0,
            test_phase_rad: std::f64::consts::FRAC_PI_3,
            copper_density_kg_m3: 8960.0,
            copper_specific_heat: 385.0,
            copper_conductivity: 401.0,
            sample_density_kg_m3: 2500.0,
            sample_specific_heat: 800.0,
            k_r: 2.0,
            beta: 1.0,
            delta: 0.62,
            t_r_kelvin: 298.0,
            noise_fraction: 0.02,
            epochs: 150,
            checkpoint_epochs: vec![10, 50, 100, 150],
            hidden_widths: vec![30, 30],
            k_min: 0.1,
            k_max: 4.0,
            t_offset_k: 300.0,
            t_scale_k: 100.0,
            adam: AdamConfig::default(),
            newton_abs_tol: 1e-6,
            newton_max_iter: 40,
        }
    }
}

/// Top-level config file: tagged by experiment kind.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case")]
pub enum ExperimentConfig {
    Uniaxial(UniaxialConfig),
    Brazilian(BrazilianConfig),
    Torsion(TorsionConfig),
    Thermal(ThermalConfig),
}

impl ExperimentConfig {
    pub fn from_str(text: &str) -> Result<Self, TrainError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| {
            TrainError::InvalidConfig(format!("config parse error at line {}: {}", e.line(), e))
        })?;
        let version = cfg.schema_version();
        if version != CONFIG_SCHEMA_VERSION {
            return Err(TrainError::InvalidConfig(format!(
                "unsupported config schema_version {version} (expected {CONFIG_SCHEMA_VERSION})"
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self, TrainError> {
        Self::from_str(&std::fs::read_to_string(path)?)
    }

    pub fn schema_version(&self) -> u32 {
        match self {
            Self::Uniaxial(c) => c.schema_version,
            Self::Brazilian(c) => c.schema_version,
            Self::Torsion(c) => c.schema_version,
            Self::Thermal(c) => c.schema_version,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Self::Uniaxial(c) => c.seed,
            Self::Brazilian(c) => c.seed,
            Self::Torsion(c) => c.seed,
            Self::Thermal(c) => c.seed,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            Self::Uniaxial(c) => c.seed = seed,
            Self::Brazilian(c) => c.seed = seed,
            Self::Torsion(c) => c.seed = seed,
            Self::Thermal(c) => c.seed = seed,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        match self {
            Self::Uniaxial(c) => {
                if c.n_train == 0 || c.n_test == 0 {
                    return bad("split sizes must be >= 1");
                }
                if c.noise_fraction < 0.0 {
                    return bad("noise fraction must be >= 0");
                }
                if c.epochs == 0 {
                    return bad("epochs must be >= 1");
                }
            }
            Self::Brazilian(c) => {
                if c.n_train == 0 || c.n_test == 0 {
                    return bad("split sizes must be >= 1");
                }
                if c.noise_fraction < 0.0 {
                    return bad("noise fraction must be >= 0");
                }
                if c.epochs == 0 {
                    return bad("epochs must be >= 1");
                }
            }
            Self::Torsion(_) => {}
            Self::Thermal(c) => {
                if c.n_steps == 0 {
                    return bad("n_steps must be >= 1");
                }
                if c.noise_fraction < 0.0 {
                    return bad("noise fraction must be >= 0");
                }
                if c.epochs == 0 {
                    return bad("epochs must be >= 1");
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serialize config")
    }
}

/// FNV-1a (64-bit) over the canonical JSON encoding; stable across runs.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let text = cfg.to_json();
    let mut h: u64 = 0xcbf29ce484222325;
    for b in text.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}
