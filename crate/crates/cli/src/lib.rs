//! Experiment runner: one subcommand per experiment, each reading a JSON
//! config and writing CSV/JSON plot data into an output directory.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod output;

use commands::RunOptions;

#[derive(Parser, Debug)]
#[command(name = "tempdyn", version, about = "Inverse-temperature training dynamics experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON experiment config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Replaces every model seed in the config.
    #[arg(long, global = true)]
    pub seed_override: Option<u64>,
    /// Worker threads for grid points (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Learning curves across beta on the eta_tilde t axis.
    Collapse,
    /// tau_z and tau_nl over beta and |Z0|.
    Timescales,
    /// Outcomes over the (beta, c) plane.
    PhasePlane,
    /// Best learning rate per beta.
    LrSweep,
    /// Softmax Jacobian spectra, exact and large-beta.
    Spectra,
    /// Regularized-flow equilibria.
    Fixedpoint,
    /// Momentum collapse at fixed gamma_tilde.
    Momentum,
    /// Tangent kernel matrix dump.
    NtkDump,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Collapse => "collapse",
            Command::Timescales => "timescales",
            Command::PhasePlane => "phase-plane",
            Command::LrSweep => "lr-sweep",
            Command::Spectra => "spectra",
            Command::Fixedpoint => "fixedpoint",
            Command::Momentum => "momentum",
            Command::NtkDump => "ntk-dump",
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let config = cli.config.as_deref().context("--config is required")?;
    let out = cli.out.as_deref().context("--out is required")?;
    let opts = RunOptions {
        config,
        out,
        seed_override: cli.seed_override,
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.jobs {
        if n == 0 {
            anyhow::bail!("--jobs must be positive");
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build()?;
    log::info!("{} with {} -> {}", cli.command.name(), config.display(), out.display());
    pool.install(|| match cli.command {
        Command::Collapse => commands::collapse::run(&opts),
        Command::Timescales => commands::timescales::run(&opts),
        Command::PhasePlane => commands::phase_plane::run(&opts),
        Command::LrSweep => commands::lr_sweep::run(&opts),
        Command::Spectra => commands::spectra::run(&opts),
        Command::Fixedpoint => commands::fixedpoint::run(&opts),
        Command::Momentum => commands::momentum::run(&opts),
        Command::NtkDump => commands::ntk_dump::run(&opts),
    })?;
    log::info!("{} done", cli.command.name());
    Ok(())
}
