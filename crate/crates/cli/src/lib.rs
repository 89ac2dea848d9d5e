//! The `capcal` command-line tool.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 backend failure,
//! 3 file input or output error.

pub mod args;
pub mod config;
mod error;
pub mod eval;
pub mod inspect;
pub mod rerank;

use std::io::Write;

use clap::Parser;

pub use error::CliError;

use args::{Cli, Command};
use config::FileConfig;

/// Runs the command and returns its stdout text.
pub fn execute(cli: &Cli) -> Result<String, CliError> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    match &cli.command {
        Command::Rerank(a) => rerank::cmd_rerank(a, file).map(|()| String::new()),
        Command::Prior(a) => inspect::cmd_prior(a, file),
        Command::Explain(a) => inspect::cmd_explain(a, file),
        Command::Eval(a) => eval::cmd_eval(a),
        Command::Compare(a) => eval::cmd_compare(a),
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let _ = env_logger::Builder::new()
        .parse_filters(&cli.log)
        .format_timestamp(None)
        .try_init();
    match execute(&cli) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            let _ = stdout.write_all(out.as_bytes());
            let _ = stdout.flush();
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
