//! Experiment runner for the lfpmc toolkit: configuration parsing,
//! deterministic experiment execution, CSV output and SVG plots.

pub mod config;
pub mod error;
pub mod experiment;
pub mod manifest;
pub mod svg;

pub use config::{parse_config, serialize_config, ConfigError, ExperimentConfig, ExperimentKind, MethodKind};
pub use error::{CliError, EXIT_CONFIG, EXIT_DEGENERATE, EXIT_OK, EXIT_RUNTIME};
pub use experiment::{plot_metrics, run_experiment, RunSummary};
