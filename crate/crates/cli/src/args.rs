use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "otj",
    version,
    about = "On-the-job learning: a sequence tagger that asks a crowd while it learns"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stream a dataset against a simulated crowd and export the results.
    Simulate(SimulateArgs),
    /// Stream a dataset against a frozen pool of pre-collected answers.
    Replay(ReplayArgs),
    /// Recompute the summary table from an episodes file.
    Report(ReportArgs),
    /// Serve the live broker and operator endpoints.
    Serve(ServeArgs),
}

/// Flags shared by every command that runs a stream.
#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Dataset: blank-line separated sentences of `token<TAB>label` lines.
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
    /// lense | threshold | nvote:<n> | online
    #[arg(long)]
    pub policy: Option<String>,
    /// Flat `key = value` config file. Flags override it.
    #[arg(long, env = "OTJ_CONFIG", value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for exports.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Extra config override, repeatable: `--set mcts.budget=300`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Frozen pool: one JSON record per line with example_id, position,
    /// label, delay_seconds and worker_id.
    #[arg(long, value_name = "PATH")]
    pub pool: Option<PathBuf>,
    /// Fall back to the generative crowd when a pool cell runs dry.
    #[arg(long)]
    pub fallback: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Episodes file written by simulate, replay or serve.
    #[arg(long, value_name = "PATH")]
    pub episodes: PathBuf,
    /// Label excluded from F1; `none` disables the exclusion.
    #[arg(long, default_value = "NONE")]
    pub background: String,
    #[arg(long, default_value_t = 50)]
    pub window: usize,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Shared secret for workers and operators.
    #[arg(long, env = "OTJ_TOKEN")]
    pub token: String,
    /// Seconds before an unanswered task is reassigned.
    #[arg(long, default_value_t = 30.0)]
    pub deadline: f64,
    /// Start streaming immediately instead of waiting for POST /stream/start.
    #[arg(long)]
    pub autostart: bool,
}
