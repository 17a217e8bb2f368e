use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = cadlab::cli::Cli::parse();
    match cadlab::cli::execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cadlab: {}", e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
