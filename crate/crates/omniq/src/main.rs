use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let args = omniq::cli::Args::parse();
    omniq::cli::run(args)
}
