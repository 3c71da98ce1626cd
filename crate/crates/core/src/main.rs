use std::process::ExitCode;

use clap::Parser;
use simparts::cli::{exit_code, run, Cli};

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("simparts: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
