use std::io;
use std::process::ExitCode;

use clap::Parser;
use harmlens_service::cli::{self, Cli};
use tracing_subscriber::EnvFilter;

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("HARMLENS_LOG").unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(io::stderr)
        .init();
    let cli = Cli::parse();
    ExitCode::from(cli::run(cli, &mut io::stdout().lock(), &mut io::stderr()))
}
