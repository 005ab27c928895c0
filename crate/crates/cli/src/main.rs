use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    match srevo_cli::run(srevo_cli::Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
