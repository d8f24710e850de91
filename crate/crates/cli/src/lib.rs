//! Staged experiment runner around `infercomp-core`.

pub mod config;
pub mod error;
pub mod pipeline;

pub use config::{validate_config, ExperimentConfig};
pub use error::{CliError, Result};
pub use pipeline::{run_stages, Stage, StageManifest, StageStatus, Summary};

/// Read and validate a config file.
pub fn load_config(path: &std::path::Path) -> Result<ExperimentConfig> {
    let raw = std::fs::read_to_string(path).map_err(|e| CliError::Config(vec![format!("{}: {e}", path.display())]))?;
    validate_config(&raw).map_err(CliError::Config)
}
