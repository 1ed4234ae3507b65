use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::Format;

#[derive(Debug, Parser)]
#[command(name = "spinscramble", version, about = "Spin-cluster scrambling simulations, decoupling probes and cluster-size inversion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML config, or the manifest.json of an earlier run.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Overrides `rng_seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; overrides `output_dir` (default `out`).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Phase signals, coherence spectra, Loschmidt echoes and OTOC series for n = 0..n_max.
    SimulateMqc(Common),
    /// One Floquet decoupling detection run with its bi-exponential fit.
    SimulateDd(Common),
    /// (tau, theta) grid of decoupling runs: fits, optimal cycle count and SNR per cell.
    Sweep(Common),
    /// Cluster-size distributions from coherence spectra (CSV: n,k,value).
    Invert {
        #[command(flatten)]
        common: Common,
        #[arg(required = true, value_name = "SPECTRUM")]
        inputs: Vec<PathBuf>,
        /// Record failing spectra and keep going; the run still exits 1.
        #[arg(long)]
        continue_on_error: bool,
    },
    /// Power-law growth of the front and width from analytics files written by `invert`.
    FitGrowth {
        #[command(flatten)]
        common: Common,
        #[arg(required = true, value_name = "ANALYTICS")]
        inputs: Vec<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SimulateMqc(_) => "simulate-mqc",
            Command::SimulateDd(_) => "simulate-dd",
            Command::Sweep(_) => "sweep",
            Command::Invert { .. } => "invert",
            Command::FitGrowth { .. } => "fit-growth",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::SimulateMqc(c) | Command::SimulateDd(c) | Command::Sweep(c) => c,
            Command::Invert { common, .. } | Command::FitGrowth { common, .. } => common,
        }
    }
}
