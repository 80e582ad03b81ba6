mod cli;
mod commands;
mod confirm;

use std::process::ExitCode;

use clap::Parser;
use tracing_subscriber::EnvFilter;

use cli::{Cli, Command};
use commands::UsageError;

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    let result = match cli.command {
        Command::Gen(a) => commands::gen(a).map(|_| true),
        Command::Fit(a) => commands::fit(a).map(|_| true),
        Command::Score(a) => commands::score(a).map(|_| true),
        Command::Extract(a) => commands::extract(a).map(|_| true),
        Command::Match(a) => commands::match_spectrum(a).map(|_| true),
        Command::Pipeline(a) => commands::pipeline(a),
        Command::CompareNmf(a) => commands::compare(a).map(|_| true),
        Command::Serve(a) => commands::serve(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
