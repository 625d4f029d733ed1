//! `afie`: score convolution layers, allocate pruning ratios and prune
//! chain-topology weight archives.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Per-layer entropy and AFIE table.
    Inspect,
    /// Allocate ratios and draw filter masks.
    Plan,
    /// Plan, then cut the pruned filters out of the archive.
    Prune,
    /// Re-check a plan against its archive.
    Verify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Table,
}

#[derive(Debug, Parser)]
#[command(
    name = "afie",
    version,
    about = "Entropy-guided filter pruning planner"
)]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,

    /// ATA weight archive.
    #[arg(long, value_name = "PATH")]
    pub archive: PathBuf,

    /// Global pruning ratio in (0, 1).
    #[arg(long, value_name = "FLOAT")]
    pub ratio: Option<f64>,

    #[arg(long, value_name = "INT", default_value_t = 42)]
    pub seed: u64,

    /// Per-layer ratio ceiling.
    #[arg(long, value_name = "FLOAT", default_value_t = 0.99)]
    pub clamp: f64,

    /// Filters every layer keeps regardless of its ratio.
    #[arg(long, value_name = "INT", default_value_t = 1)]
    pub min_keep: usize,

    /// JSON list of per-layer AFIE values used instead of computed scores.
    #[arg(long, value_name = "PATH")]
    pub afie_override: Option<PathBuf>,

    /// Plan JSON to check (verify only).
    #[arg(long, value_name = "PATH")]
    pub plan: Option<PathBuf>,

    /// Output file: the report (inspect), plan JSON (plan) or pruned archive (prune).
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Core {
        context: String,
        source: afie_core::Error,
    },

    /// Verification findings, already printed in the requested format.
    #[error("{0} violation(s) found")]
    Violations(usize),
}

impl CliError {
    pub fn core(context: impl Into<String>, source: afie_core::Error) -> Self {
        Self::Core {
            context: context.into(),
            source,
        }
    }

    /// 0 success, 1 usage/validation, 2 infeasible budget, 3 unsupported topology, 4 I/O.
    pub fn exit_code(&self) -> u8 {
        use afie_core::Error as E;
        match self {
            Self::Usage(_) | Self::Violations(_) => 1,
            Self::Io { .. } => 4,
            Self::Core { source, .. } => match source {
                E::Io(_) => 4,
                E::Infeasible { .. } => 2,
                E::UnsupportedTopology(_) => 3,
                E::Format(_) | E::Length { .. } | E::Validation { .. } => 1,
            },
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("afie: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
