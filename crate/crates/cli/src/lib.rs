//! Command-line front end: file formats, run manifests, the latency harness
//! and the subcommands that tie them to the library.

pub mod bench;
pub mod cli;
pub mod commands;
pub mod formats;
pub mod manifest;

use std::ffi::OsString;
use std::io;

use clap::error::ErrorKind;
use clap::Parser;
use listen::ListenError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Exit code for a failed command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<ListenError>() {
            return match e {
                ListenError::Divergence { .. } | ListenError::UndefinedAccuracy => EXIT_RUNTIME,
                _ => EXIT_VALIDATION,
            };
        }
        if cause.is::<formats::InputError>() || cause.is::<serde_json::Error>() {
            return EXIT_VALIDATION;
        }
        if cause.is::<io::Error>() {
            return EXIT_RUNTIME;
        }
    }
    EXIT_RUNTIME
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match cli::Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    match commands::execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
