//! Command-line pipeline over the `flarecdr` library.
//!
//! Every command writes into a run directory and finishes with a
//! `manifest.json` holding the config echo, the seed and SHA-256 hashes of
//! inputs and outputs.

pub mod cli;
pub mod commands;
pub mod run;

use std::ffi::OsString;

use clap::Parser;

use crate::run::{Failure, EXIT_CONFIG};

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match cli::Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.jobs {
        Some(0) => Err(Failure::config("--jobs must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Failure::config(format!("cannot start {n} workers: {e}")))
            .and_then(|pool| pool.install(|| commands::dispatch(cli.command))),
        None => commands::dispatch(cli.command),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message.replace('\n', " "));
            f.code
        }
    }
}
