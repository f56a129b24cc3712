use std::process::ExitCode;

use clap::Parser;

use covxplain::commands::{self, Command};

/// Feature-pair explanations of ensemble predictive uncertainty.
#[derive(Parser, Debug)]
#[command(name = "covxplain", version, propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
