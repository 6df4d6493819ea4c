use std::process::ExitCode;

use clap::Parser;
use kstar_cli::Cli;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    ExitCode::from(kstar_cli::run(Cli::parse()))
}
