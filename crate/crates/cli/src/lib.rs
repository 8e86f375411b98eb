//! Experiment driver for the `pilotwave` lattice model: TOML configuration,
//! built-in presets, artifact writing and invariant verification.

pub mod config;
pub mod presets;
pub mod run;
pub mod verify;

use std::path::Path;

use anyhow::{Context, Result};

pub use config::ExperimentConfig;

/// Loads a config file, or a built-in preset when no such file exists.
pub fn load_config(arg: &str) -> Result<ExperimentConfig> {
    let path = Path::new(arg);
    if path.exists() {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return ExperimentConfig::from_toml(&text).with_context(|| format!("in {}", path.display()));
    }
    presets::load(arg).with_context(|| format!("{arg} is neither a readable file nor a preset name"))
}
