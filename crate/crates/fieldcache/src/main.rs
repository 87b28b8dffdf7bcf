use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = fieldcache::cli::Cli::parse();
    match fieldcache::cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
