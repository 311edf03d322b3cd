use std::process::ExitCode;

use clap::Parser;
use tagc_cli::{execute, out_dir, write_files, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match execute(&cli) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    print!("{}", outcome.stdout);
    if let Some(dir) = out_dir(&cli) {
        if let Err(e) = write_files(dir, &outcome) {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    }
    ExitCode::from(outcome.exit_code() as u8)
}
