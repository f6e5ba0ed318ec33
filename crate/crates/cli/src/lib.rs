//! Command-line orchestration of preprocessing, training and evaluation.

pub mod commands;
pub mod config;
pub mod error;
pub mod log;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use imu_align::evaluation::Modality;
use serde::Serialize;

pub use config::{GlobalArgs, Overrides, RunConfig};
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "imu-align",
    version,
    about = "Align an IMU encoder to a frozen vision embedding space"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Window and cache the recordings listed in a JSONL manifest.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = imu_align::data::N_ACTION_CLASSES)]
        classes: usize,
    },
    /// Write a synthetic paired dataset in the cache layout.
    Synth {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train the IMU encoder and export embeddings.
    Train {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Recompute embeddings of one part from a checkpoint.
    Embed {
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long, default_value = "imu")]
        modality: Modality,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Linear probes on exported embeddings.
    Probe {
        #[arg(long)]
        run: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// In-batch cross-modal retrieval.
    Retrieve {
        #[arg(long)]
        run: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Weighted combination of vision and IMU embeddings.
    Combine {
        #[arg(long)]
        run: Option<PathBuf>,
        /// Mix the resampled latents before pooling.
        #[arg(long)]
        latent: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Two-dimensional t-SNE projection of exported embeddings.
    Tsne {
        #[arg(long)]
        run: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Finite-difference gradient checks of the training objective.
    Gradcheck,
    /// Consolidated probe, retrieval and combination metrics of a run.
    Report {
        run: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("summary serializes")
}

/// Config of an existing run directory: its saved config, then flags.
fn run_config(run: &Option<PathBuf>, global: &GlobalArgs, o: &Overrides) -> CliResult<RunConfig> {
    let dir = run
        .clone()
        .or_else(|| global.out.clone())
        .ok_or_else(|| imu_align::Error::InvalidArgument("pass --run DIR or --out DIR".into()))?;
    let saved = dir.join(config::CONFIG_FILE);
    let base = saved.is_file().then_some(saved.as_path());
    let mut cfg = RunConfig::resolve(base, global, o)?;
    cfg.out = dir;
    Ok(cfg)
}

/// Executes one command and returns its JSON summary.
pub fn run(cli: Cli) -> CliResult<serde_json::Value> {
    let g = &cli.global;
    match &cli.command {
        Command::Preprocess { manifest, classes } => {
            let out = g.out.clone().ok_or_else(|| {
                imu_align::Error::InvalidArgument("preprocess needs --out DIR".into())
            })?;
            Ok(to_json(&commands::cmd_preprocess(
                manifest, &out, *classes,
            )?))
        }
        Command::Synth { overrides } => {
            let cfg = RunConfig::resolve(None, g, overrides)?;
            Ok(to_json(&commands::cmd_synth(&cfg)?))
        }
        Command::Train { overrides } => {
            let cfg = RunConfig::resolve(None, g, overrides)?;
            Ok(to_json(&commands::cmd_train(cfg)?))
        }
        Command::Embed {
            run,
            modality,
            overrides,
        } => Ok(to_json(&commands::cmd_embed(
            &run_config(run, g, overrides)?,
            *modality,
        )?)),
        Command::Probe { run, overrides } => Ok(to_json(&commands::cmd_probe(&run_config(
            run, g, overrides,
        )?)?)),
        Command::Retrieve { run, overrides } => Ok(to_json(&commands::cmd_retrieve(&run_config(
            run, g, overrides,
        )?)?)),
        Command::Combine {
            run,
            latent,
            overrides,
        } => Ok(to_json(&commands::cmd_combine(
            &run_config(run, g, overrides)?,
            *latent,
        )?)),
        Command::Tsne { run, overrides } => Ok(to_json(&commands::cmd_tsne(&run_config(
            run, g, overrides,
        )?)?)),
        Command::Gradcheck => Ok(to_json(&commands::cmd_gradcheck(g.seed.unwrap_or(0))?)),
        Command::Report { run, overrides } => Ok(to_json(&commands::cmd_report(&run_config(
            run, g, overrides,
        )?)?)),
    }
}
