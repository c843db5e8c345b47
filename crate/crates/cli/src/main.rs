//! `a2w`: synthesize corpora, train, decode, score and analyze models.

mod commands;
mod outputs;

use std::process::ExitCode;

use clap::Parser;

use commands::Cli;

/// Exit codes, one per error category.
pub mod exit {
    pub const USAGE: u8 = 2;
    pub const CONFIG: u8 = 3;
    pub const IO: u8 = 4;
    pub const FORMAT: u8 = 5;
    pub const DATA: u8 = 6;
    pub const TRAINING: u8 = 7;
}

fn exit_code(err: &a2w::Error) -> u8 {
    use a2w::Error as E;
    match err {
        E::Config(_) => exit::CONFIG,
        E::Io { .. } => exit::IO,
        E::Malformed { .. } | E::Truncated { .. } | E::BadHeader { .. } => exit::FORMAT,
        E::InfeasibleTarget { .. } | E::AllInfeasible | E::NonFinite { .. } | E::StaleTape { .. } => exit::TRAINING,
        E::InvalidArgument(_) | E::OracleBound(_) => exit::USAGE,
        _ => exit::DATA,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
