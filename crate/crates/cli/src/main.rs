mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::NotConverged;
use crate::config::GridRequest;

/// Positivity- and Markov-constrained transfer-operator fits from snapshot data.
///
/// Log level is read from NSDMD_LOG (default `info`).
#[derive(Debug, Parser)]
#[command(name = "nsdmd", version)]
struct Cli {
    /// Experiment configuration (JSON). Omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `system.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample snapshot pairs from the configured system.
    Simulate,
    /// Build the dictionary and fit EDMD, DMD or NSDMD to a snapshot file.
    Fit {
        /// Defaults to `<out-dir>/<output.snapshots>`.
        #[arg(long)]
        snapshots: Option<PathBuf>,
    },
    /// Eigenvalue table plus one lattice CSV per requested eigenfunction.
    Spectrum {
        #[arg(long)]
        model: Option<PathBuf>,
        /// `density`, `koopman:N` or `pf:N` (1-based); repeatable. Replaces
        /// `output.which`.
        #[arg(long)]
        which: Vec<GridRequest>,
    },
    /// Lyapunov measure on the complement of an attractor index set.
    Lyapunov {
        #[arg(long)]
        model: Option<PathBuf>,
        /// 0-based basis indices; identified from the invariant density when omitted.
        #[arg(long, value_delimiter = ',')]
        attractor: Option<Vec<usize>>,
        /// Overrides `output.attractor_threshold`.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Ulam transition matrix and its stationary density on a box partition.
    Ulam {
        #[arg(long)]
        snapshots: Option<PathBuf>,
    },
    /// L1 distance between the model's invariant density and the Ulam one.
    Compare {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        snapshots: Option<PathBuf>,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use nsdmd::Error as E;
    if err.downcast_ref::<NotConverged>().is_some() {
        return 3;
    }
    match err.downcast_ref::<nsdmd::Error>() {
        Some(E::Spectral(_)) => 4,
        Some(E::Contract(_) | E::Lookup { .. } | E::Format { .. } | E::EmptyData(_) | E::Threshold(_)) => 2,
        Some(E::Indefinite { .. }) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NSDMD_LOG", "info")).init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
