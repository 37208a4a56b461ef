use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = koopman_cli::Cli::parse();
    match koopman_cli::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
