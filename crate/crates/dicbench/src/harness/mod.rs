//! Experiment harness: configuration, reproducible runs, CSV reports and
//! the built-in verification suite.

pub mod acceptance;
pub mod config;
pub mod experiment;
pub mod report;

pub use acceptance::{run_acceptance, CriterionResult};
pub use config::{AmplitudeSpec, ExperimentConfig, FieldConfig};
pub use experiment::{run_experiment, CellRecord, ExperimentOutput};
