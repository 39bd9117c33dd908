//! Configuration-driven experiments and their CSV/JSON outputs.

pub mod config;
pub mod output;
pub mod runner;

pub use config::{parse_config, validate_config, ExperimentConfig, ExperimentKind, ExperimentOptions, ParamsGrid};
pub use output::{read_results, Manifest, ResultRow, SampleDump, CSV_COLUMNS, SCHEMA_VERSION};
pub use runner::{run, run_and_write, RunOutput};
