//! `shopdesk`: run episodes, benchmark suites and ablations, compute metrics
//! from recorded files, replay transcripts and chat with the agent.

mod commands;
mod config;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::FileConfig;

#[derive(Debug, Parser)]
#[command(
    name = "shopdesk",
    version,
    about = "Customer-service agent harness for a simulated storefront"
)]
struct Cli {
    /// JSON config file; flags override its settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Play one task and write its artifacts.
    Run(commands::RunArgs),
    /// Run a suite n times per task and report pass^k.
    Bench(commands::BenchArgs),
    /// Run a suite under each config of a matrix.
    Ablate(commands::AblateArgs),
    /// Recompute metrics from recorded trials, annotations or given values.
    Metrics(commands::MetricsArgs),
    /// Talk to the agent as the buyer.
    Chat(commands::ChatArgs),
    /// Print a recorded transcript, optionally with its trace.
    Replay(commands::ReplayArgs),
}

/// Exit code 1 for task or metric failures, 2 for usage and config errors.
#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn failure(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

fn dispatch(cli: Cli) -> Result<u8, CliError> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Run(args) => commands::run(args, &file),
        Command::Bench(args) => commands::bench(args, &file),
        Command::Ablate(args) => commands::ablate(args, &file),
        Command::Metrics(args) => commands::metrics(args),
        Command::Chat(args) => commands::chat(args, &file),
        Command::Replay(args) => commands::replay(args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
