//! Command-line layer: config documents, file formats and the subcommands.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;

use std::path::PathBuf;

use cli::Command;
use config::{Manifest, RunConfig};
pub use error::{CliError, Result};

pub const DEFAULT_OUTPUT_DIR: &str = "out";

/// Resolves the config, runs the command under the output-directory lock and
/// writes `manifest.json`. Returns the output directory.
pub fn run(command: &Command) -> Result<PathBuf> {
    let common = command.common();
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.rng_seed = seed;
    }
    if let Some(format) = common.format {
        cfg.format = format;
    }
    let out = common.out.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| DEFAULT_OUTPUT_DIR.into());
    cfg.output_dir = Some(out.clone());

    let inputs: &[PathBuf] = match command {
        Command::Invert { inputs, .. } | Command::FitGrowth { inputs, .. } => inputs,
        _ => &[],
    };
    let _lock = io::OutputLock::acquire(&out)?;
    let outcome = match command {
        Command::SimulateMqc(_) => commands::simulate_mqc(&mut cfg, &out)?,
        Command::SimulateDd(_) => commands::simulate_dd(&mut cfg, &out)?,
        Command::Sweep(_) => commands::run_sweep(&mut cfg, &out)?,
        Command::Invert { continue_on_error, .. } => commands::invert(&mut cfg, &out, inputs, *continue_on_error)?,
        Command::FitGrowth { .. } => commands::fit_growth(&mut cfg, &out, inputs)?,
    };
    let mut manifest = Manifest::new(command.name(), cfg, inputs);
    manifest.outputs = outcome.outputs;
    let path = out.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    if !outcome.failures.is_empty() {
        return Err(CliError::Runtime(format!("{} item(s) failed:\n  {}", outcome.failures.len(), outcome.failures.join("\n  "))));
    }
    Ok(out)
}
