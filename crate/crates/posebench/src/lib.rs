//! Experiment harness for the pose denoising benchmark: seeded scene
//! corpora, the denoising ablation grid, the calibration-fraction study,
//! depth error statistics, and the file formats used by the `posebench` CLI.

pub mod config;
pub mod corpus;
pub mod error;
pub mod experiments;
pub mod io;
pub mod stages;

pub use config::{AblationCell, ExperimentConfig, MeshDescriptor, MeshShape};
pub use error::{ConfigError, FieldIssue, HarnessError, Result};
pub use experiments::{run_ablation, run_noise_stats, run_real_fraction_study, AblationOutcome, EstimateRecord};
