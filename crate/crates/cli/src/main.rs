use std::process::ExitCode;

use actoreg_cli::commands::{execute, Cli};
use actoreg_cli::config::OUT_ROOT_ENV;
use clap::Parser;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli, std::env::var_os(OUT_ROOT_ENV)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("actoreg: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
