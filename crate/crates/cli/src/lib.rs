//! Batch driver for the emulate-and-calibrate workflow.
//!
//! Stages exchange artifacts through the output directory:
//! `design/` then `runs/` then `emulate/` then `calibrate/` then `project/`,
//! with `diagnose/` and `crossval/` reading from the earlier stages.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::ExperimentConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "mrcal", version, about = "Multiresolution emulation and calibration of spatial models", after_long_help = config::DEFAULTS_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML experiment configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed of the stage being run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory holding every stage's artifacts.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads; 0 uses one per core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Depth above which a cell counts as flooded (overrides the config).
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub flood_threshold: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Nested maximin Latin hypercube design.
    Design,
    /// Runs the synthetic model at every design point and simulates the observation.
    RunSynth,
    /// Fits the basis and the multi- and single-resolution emulators.
    Emulate,
    /// Samples the calibration posterior.
    Calibrate,
    /// Mean model projection over thinned posterior draws.
    Project,
    /// Flood-extent metrics and standardized prediction errors.
    Diagnose {
        /// Predicted depth grid (default: the calibrated projection).
        #[arg(long)]
        pred: Option<PathBuf>,
        /// Observed depth grid (default: the simulated observation).
        #[arg(long)]
        obs: Option<PathBuf>,
    },
    /// K-fold and edge-holdout comparison of the two emulators.
    Crossval,
}

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        match cli.command {
            Command::Design => cfg.design.seed = s,
            Command::RunSynth => cfg.synth.observation_seed = s,
            Command::Emulate => cfg.emulator.seed = s,
            Command::Calibrate => cfg.mcmc.seed = s,
            Command::Project => cfg.project.seed = s,
            Command::Crossval => cfg.crossval.seed = s,
            Command::Diagnose { .. } => {}
        }
    }
    if let Some(t) = cli.flood_threshold {
        cfg.diagnose.flood_threshold = t;
    }
    cfg.validate()?;
    if cli.threads > 0 {
        // Ignored if a pool already exists (e.g. repeated in-process calls).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    let out = &cli.out;
    match &cli.command {
        Command::Design => commands::design(&cfg, out),
        Command::RunSynth => commands::run_synth(&cfg, out),
        Command::Emulate => commands::emulate(&cfg, out),
        Command::Calibrate => commands::calibrate(&cfg, out),
        Command::Project => commands::project(&cfg, out),
        Command::Diagnose { pred, obs } => commands::diagnose(&cfg, out, pred.as_deref(), obs.as_deref()),
        Command::Crossval => commands::crossval(&cfg, out),
    }
}
