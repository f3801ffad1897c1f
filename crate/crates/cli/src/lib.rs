//! Command-line front end: `simulate`, `replay`, `report` and `serve`.

pub mod args;
pub mod commands;
pub mod error;
pub mod protocol;
pub mod serve;

pub use args::{Cli, Command};
pub use error::CliError;

/// Runs one parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(args) => commands::simulate(&args).map(|_| ()),
        Command::Replay(args) => commands::replay(&args).map(|_| ()),
        Command::Report(args) => commands::report(&args).map(|_| ()),
        Command::Serve(args) => serve::serve_blocking(args),
    }
}
