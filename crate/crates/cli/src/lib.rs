//! Experiment driver for continual LEGO: dataset generation, training runs,
//! architecture sweeps, attention analysis and plots.

pub mod analyze;
pub mod config;
pub mod data;
pub mod error;
pub mod plot;
pub mod run;
pub mod sweep;

use crate::config::ExperimentConfig;
use crate::error::Result;

/// Writes the configured schedule's train and test sets under `out/data`.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<Vec<data::ManifestEntry>> {
    cfg.validate()?;
    let d = data::build(cfg)?;
    data::write(&d, &cfg.out.join("data"))
}

pub use analyze::cmd_analyze;
pub use plot::cmd_plot;
pub use run::cmd_train;
pub use sweep::cmd_sweep;
