//! Run configuration. One TOML document with optional sections; each command
//! reads the sections it needs. A manifest is the fully resolved config plus
//! the tool version, so re-running from a manifest reproduces the run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spinscramble::ddprobe::{Detection, SweepConfig, DEFAULT_N_CYCLES, DEFAULT_TRANSIENT_SKIP};
use spinscramble::evolution::EvolutionConfig;
use spinscramble::inversion::{log_grid, Alpha, AnalysisOptions, InversionOptions};
use spinscramble::mqc::{Mode, ProtocolSettings};
use spinscramble::system::{build_system_with, Geometry, SpinSystem};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL: &str = "spinscramble";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub format: Format,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mqc: Option<MqcSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dd: Option<DdSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inversion: Option<InversionSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth: Option<GrowthSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub n_spins: usize,
    pub geometry: Geometry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MqcSection {
    pub n_max: usize,
    /// Seconds per DQ block.
    pub tau_dq: f64,
    #[serde(default = "ideal_mode")]
    pub mode: Mode,
    /// Phase-cycling steps; resolved to the smallest power of two above `2N`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_phases: Option<usize>,
    #[serde(default)]
    pub mismatch: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_delay: Option<f64>,
    #[serde(default)]
    pub evolution: EvolutionConfig,
}

fn ideal_mode() -> Mode {
    Mode::IdealHamiltonian
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdSection {
    pub tau: f64,
    /// Pulse angle in radians.
    pub theta: f64,
    #[serde(default = "default_cycles")]
    pub n_cycles: usize,
    #[serde(default = "default_skip")]
    pub transient_skip: usize,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default = "one")]
    pub n_scans: usize,
    #[serde(default)]
    pub detection: Detection,
    #[serde(default)]
    pub evolution: EvolutionConfig,
}

/// Grids left out are resolved from the system's largest coupling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_grid: Option<Vec<f64>>,
    #[serde(default = "default_cycles")]
    pub n_cycles: usize,
    #[serde(default = "default_skip")]
    pub transient_skip: usize,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default = "one")]
    pub n_scans: usize,
    #[serde(default)]
    pub detection: Detection,
    #[serde(default)]
    pub evolution: EvolutionConfig,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            tau_grid: None,
            theta_grid: None,
            n_cycles: DEFAULT_N_CYCLES,
            transient_skip: DEFAULT_TRANSIENT_SKIP,
            noise_sigma: 0.0,
            n_scans: 1,
            detection: Detection::default(),
            evolution: EvolutionConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InversionSection {
    #[serde(default = "auto")]
    pub alpha: Alpha,
    /// Per-point noise standard deviation; without it alpha comes from the
    /// L-curve corner.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_estimate: Option<f64>,
    #[serde(default = "default_s_min")]
    pub s_min: f64,
    #[serde(default = "default_s_max")]
    pub s_max: f64,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default)]
    pub options: InversionOptions,
    #[serde(default)]
    pub analysis: AnalysisOptions,
    #[serde(default)]
    pub continue_on_error: bool,
}

impl Default for InversionSection {
    fn default() -> Self {
        InversionSection {
            alpha: Alpha::AUTO,
            noise_estimate: None,
            s_min: default_s_min(),
            s_max: default_s_max(),
            grid_points: default_grid_points(),
            options: InversionOptions::default(),
            analysis: AnalysisOptions::default(),
            continue_on_error: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthSection {
    /// `t_n = n * time_per_block`.
    #[serde(default = "one_f64")]
    pub time_per_block: f64,
    #[serde(default = "three")]
    pub front_exponent: f64,
    #[serde(default = "two")]
    pub width_exponent: f64,
}

impl Default for GrowthSection {
    fn default() -> Self {
        GrowthSection { time_per_block: 1.0, front_exponent: 3.0, width_exponent: 2.0 }
    }
}

fn default_cycles() -> usize {
    DEFAULT_N_CYCLES
}
fn default_skip() -> usize {
    DEFAULT_TRANSIENT_SKIP
}
fn one() -> usize {
    1
}
fn one_f64() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}
fn three() -> f64 {
    3.0
}
fn auto() -> Alpha {
    Alpha::AUTO
}
fn default_s_min() -> f64 {
    1.0
}
fn default_s_max() -> f64 {
    1e4
}
fn default_grid_points() -> usize {
    64
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{name} must be positive and finite, got {v}")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{name} must be non-negative and finite, got {v}")))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Runtime(format!("cannot serialize config: {e}")))
    }

    /// TOML config, or a manifest / bare config in JSON.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            match serde_json::from_str::<Manifest>(&text) {
                Ok(m) => Ok(m.config),
                Err(_) => serde_json::from_str::<RunConfig>(&text).map_err(|e| CliError::Config(e.to_string())),
            }
        } else {
            RunConfig::from_toml(&text)
        };
        parsed.map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn build_system(&self) -> Result<SpinSystem> {
        let s = self.system.as_ref().ok_or_else(|| CliError::Config("missing [system] section".into()))?;
        let limits = [&self.mqc.as_ref().map(|m| m.evolution), &self.dd.as_ref().map(|d| d.evolution), &self.sweep.as_ref().map(|d| d.evolution)]
            .into_iter()
            .find_map(|e| e.map(|e| e.limits))
            .unwrap_or_default();
        build_system_with(s.geometry.clone(), s.n_spins, &limits).map_err(|e| CliError::Config(format!("system: {e}")))
    }

    pub fn mqc_section(&self) -> Result<&MqcSection> {
        let m = self.mqc.as_ref().ok_or_else(|| CliError::Config("missing [mqc] section".into()))?;
        positive("mqc.tau_dq", m.tau_dq)?;
        if !m.mismatch.is_finite() || m.mismatch <= -1.0 {
            return Err(CliError::Config(format!("mqc.mismatch must be finite and > -1, got {}", m.mismatch)));
        }
        if let Some(d) = m.filter_delay {
            non_negative("mqc.filter_delay", d)?;
        }
        Ok(m)
    }

    /// Settings and phase count for the protocol.
    pub fn protocol(&self, n_spins: usize) -> Result<(ProtocolSettings, usize)> {
        let m = self.mqc_section()?;
        let mut settings = match m.mode {
            Mode::IdealHamiltonian => ProtocolSettings::ideal(m.tau_dq),
            Mode::PulseLevel => ProtocolSettings::pulse_level(m.tau_dq),
        };
        settings.mismatch = m.mismatch;
        settings.filter_delay = m.filter_delay;
        settings.evolution = m.evolution;
        let needed = 2 * n_spins + 1;
        let n_phases = m.n_phases.unwrap_or_else(|| needed.next_power_of_two());
        if n_phases < needed {
            return Err(CliError::Config(format!("mqc.n_phases = {n_phases} cannot resolve orders up to {n_spins}; need at least {needed}")));
        }
        Ok((settings, n_phases))
    }

    /// Sweep grid of the `[sweep]` section, or the single cell of `[dd]`.
    pub fn sweep_config(&self, system: &SpinSystem, single: bool) -> Result<SweepConfig> {
        let defaults = SweepConfig::default_for(system);
        let cfg = if single {
            let d = self.dd.as_ref().ok_or_else(|| CliError::Config("missing [dd] section".into()))?;
            SweepConfig {
                tau_grid: vec![d.tau],
                theta_grid: vec![d.theta],
                n_cycles: d.n_cycles,
                transient_skip: d.transient_skip,
                noise_sigma: d.noise_sigma,
                n_scans: d.n_scans,
                base_seed: self.rng_seed,
                detection: d.detection,
                evolution: d.evolution,
            }
        } else {
            let s = self.sweep.clone().unwrap_or_default();
            SweepConfig {
                tau_grid: s.tau_grid.unwrap_or(defaults.tau_grid),
                theta_grid: s.theta_grid.unwrap_or(defaults.theta_grid),
                n_cycles: s.n_cycles,
                transient_skip: s.transient_skip,
                noise_sigma: s.noise_sigma,
                n_scans: s.n_scans,
                base_seed: self.rng_seed,
                detection: s.detection,
                evolution: s.evolution,
            }
        };
        let section = if single { "dd" } else { "sweep" };
        if cfg.tau_grid.is_empty() || cfg.theta_grid.is_empty() {
            return Err(CliError::Config(format!("{section}: grids must be non-empty")));
        }
        for t in &cfg.tau_grid {
            positive(&format!("{section}.tau"), *t)?;
        }
        for t in &cfg.theta_grid {
            if !t.is_finite() {
                return Err(CliError::Config(format!("{section}.theta must be finite, got {t}")));
            }
        }
        non_negative(&format!("{section}.noise_sigma"), cfg.noise_sigma)?;
        cfg.cell_config(0).validate().map_err(|e| CliError::Config(format!("{section}: {e}")))?;
        Ok(cfg)
    }

    pub fn inversion_section(&self) -> Result<InversionSection> {
        let s = self.inversion.clone().unwrap_or_default();
        positive("inversion.s_min", s.s_min)?;
        positive("inversion.s_max", s.s_max)?;
        if s.s_max <= s.s_min {
            return Err(CliError::Config("inversion.s_max must exceed inversion.s_min".into()));
        }
        if s.grid_points < 8 {
            return Err(CliError::Config(format!("inversion.grid_points must be at least 8, got {}", s.grid_points)));
        }
        if let Some(e) = s.noise_estimate {
            positive("inversion.noise_estimate", e)?;
        }
        if let Alpha::Fixed(a) = s.alpha {
            non_negative("inversion.alpha", a)?;
        }
        Ok(s)
    }

    pub fn size_grid(section: &InversionSection) -> Result<Vec<f64>> {
        Ok(log_grid(section.s_min, section.s_max, section.grid_points)?)
    }

    pub fn growth_section(&self) -> Result<GrowthSection> {
        let g = self.growth.clone().unwrap_or_default();
        positive("growth.time_per_block", g.time_per_block)?;
        Ok(g)
    }
}

/// Resolved config plus provenance; written next to every run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool: String,
    pub version: String,
    pub command: String,
    #[serde(default)]
    pub inputs: Vec<String>,
    pub config: RunConfig,
    /// Files written by the run, relative to the output directory.
    #[serde(default)]
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config: RunConfig, inputs: &[PathBuf]) -> Manifest {
        Manifest {
            schema_version: SCHEMA_VERSION,
            tool: TOOL.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
            config,
            outputs: Vec::new(),
        }
    }
}
