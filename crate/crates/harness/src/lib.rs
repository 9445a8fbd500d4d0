//! Experiment runner for the `dtc-core` simulator: config files, figure
//! presets, parallel disorder sweeps, and CSV output.

pub mod config;
pub mod error;
pub mod run;

pub use config::{parse_config, Engine, ExperimentFile, ExperimentSpec, Mode, Preset, Sweep};
pub use error::{HarnessError, Result};
pub use run::{execute, run_experiment};

/// Environment variable holding the worker-thread count.
pub const WORKERS_ENV: &str = "DTC_WORKERS";

/// Reads the worker count from [`WORKERS_ENV`]; unset means all cores.
pub fn workers_from_env() -> Result<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(HarnessError::config(format!("{WORKERS_ENV} must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(None),
    }
}
