//! Command-line front end: dataset generation, pool training, prediction,
//! evaluation, diversity analysis and the ensemble-size sweep.

pub mod args;
pub mod benchmark;
pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use std::ffi::OsString;

use clap::{CommandFactory, FromArgMatches};

pub use error::CliError;

/// Parses `args` (program name first) and runs the requested command.
pub fn main_with_args(args: Vec<OsString>) -> Result<(), CliError> {
    let root = args::Cli::command();
    let args = config::expand(&root, args)?;
    let matches = match root.try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            return Err(CliError::Usage(e.render().to_string().trim_end().to_string()));
        }
    };
    let cli = args::Cli::from_arg_matches(&matches).map_err(|e| CliError::Usage(e.to_string()))?;
    if cli.version {
        print!("{}", commands::version_text());
        return Ok(());
    }
    match cli.command {
        Some(c) => commands::run(c),
        None => Err(CliError::Usage("no subcommand given; see --help".into())),
    }
}
