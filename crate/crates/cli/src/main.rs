use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    ipdd_cli::main_with(ipdd_cli::Cli::parse())
}
