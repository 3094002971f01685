//! Command-line front end: training, batch attacks, comparison reports and
//! hyperparameter sweeps over the desk classifier.

pub mod args;
pub mod batch;
pub mod commands;
pub mod output;
pub mod source;

use std::ffi::OsString;

use clap::Parser;
use jnd_core::JndError;

use args::{Cli, Command};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub fn run(cli: &Cli) -> Result<(), JndError> {
    match &cli.command {
        Command::Train(a) => commands::train(a),
        Command::Attack(a) => commands::attack(a),
        Command::Compare(a) => commands::compare(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Stats(a) => commands::stats(a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_user_error() {
                EXIT_USAGE
            } else {
                EXIT_INTERNAL
            }
        }
    }
}
