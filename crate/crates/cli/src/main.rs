use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    vitality_cli::main_with(vitality_cli::Cli::parse())
}
