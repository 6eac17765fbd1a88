//! The four experiment pipelines: displacement-controlled uniaxial compression,
//! load-controlled Brazilian disc, zero-shot 3D torsion transfer, and transient
//! heat conduction, with their configuration types.

pub mod brazilian;
pub mod config;
pub mod thermal;
pub mod torsion;
pub mod uniaxial;

pub use config::{config_hash, ExperimentConfig, Split};
