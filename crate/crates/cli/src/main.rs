//! `blockcloud` command-line front end.
//!
//! Exit codes: 0 success, 1 bad input or configuration, 2 an invariant
//! or replay check failed.

mod sim_cmd;
mod tools;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io { .. } | CliError::Input { .. } => 1,
            CliError::Failed(_) => 2,
        }
    }
}

pub(crate) fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn input_error(path: &Path, message: impl ToString) -> CliError {
    CliError::Input {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

#[derive(Debug, Parser)]
#[command(name = "blockcloud", version, about = "BlockCloud simulator and scoring tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Discrete-event simulation.
    Sim {
        #[command(subcommand)]
        command: SimCommand,
    },
    /// Economic scoring utilities.
    Econ {
        #[command(subcommand)]
        command: EconCommand,
    },
    /// Validator protocol selection.
    Bft {
        #[command(subcommand)]
        command: BftCommand,
    },
    /// Cross-chain token exchange.
    Xchain {
        #[command(subcommand)]
        command: XchainCommand,
    },
    /// Re-runs a scenario and checks the output against a recorded run.
    Replay(sim_cmd::ReplayArgs),
}

#[derive(Debug, Subcommand)]
enum SimCommand {
    /// Runs one or more scenarios and writes line-delimited records.
    Run(sim_cmd::RunArgs),
}

#[derive(Debug, Subcommand)]
enum EconCommand {
    /// Prints the relevancy score of every task and node profile in a file.
    Score(FileArg),
}

#[derive(Debug, Subcommand)]
enum BftCommand {
    /// Picks a protocol from a catalog and preference file.
    Select(FileArg),
}

#[derive(Debug, Subcommand)]
enum XchainCommand {
    /// Exchanges tokens between two chains and returns them home.
    Demo(tools::DemoArgs),
}

#[derive(Debug, Args)]
struct FileArg {
    /// TOML input file.
    #[arg(long)]
    config: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sim {
            command: SimCommand::Run(args),
        } => sim_cmd::run(&args),
        Command::Replay(args) => sim_cmd::replay(&args),
        Command::Econ {
            command: EconCommand::Score(f),
        } => tools::econ_score(&f.config),
        Command::Bft {
            command: BftCommand::Select(f),
        } => tools::bft_select(&f.config),
        Command::Xchain {
            command: XchainCommand::Demo(args),
        } => tools::xchain_demo(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("blockcloud: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
