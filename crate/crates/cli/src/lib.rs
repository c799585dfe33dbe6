//! Command-line front end for `pointseg`.
//!
//! `segment` and `baseline` write, per input `<name>`, into the output
//! directory:
//!
//! - `<name>.ply`: ASCII PLY with a `label` property and palette colours;
//! - `<name>.report.txt` and `<name>.report.json` when the input carries
//!   ground-truth labels;
//! - `<name>.train.csv` (`iteration,loss,distinct_labels`) and `<name>.ckpt`
//!   for the `srgnet` method;
//!
//! and one `manifest.json` for the whole run. `segment --manifest` replays a
//! run from it.

pub mod args;
mod commands;
pub mod manifest;

use clap::Parser;

pub use args::Cli;
use args::Command;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_PIPELINE: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Pipeline(String),
}

impl CliError {
    /// Same kind, new message.
    pub fn with_message(self, msg: String) -> Self {
        match self {
            CliError::Usage(_) => CliError::Usage(msg),
            CliError::Io(_) => CliError::Io(msg),
            CliError::Pipeline(_) => CliError::Pipeline(msg),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io(_) => EXIT_IO,
            CliError::Pipeline(_) => EXIT_PIPELINE,
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Segment(a) => commands::segment(a),
        Command::Baseline(a) => commands::baseline(a),
        Command::Eval(a) => commands::eval(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Synth(a) => commands::synth(a),
    }
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
