//! Command implementations behind the `tagc` binary. Each command returns
//! its stdout summary and report files; the binary writes them out.

pub mod args;
pub mod commands;
pub mod error;

use std::path::Path;

pub use args::{Cli, Command};
pub use commands::{load_run_config, train, Manifest, Outcome, Seeds};
pub use error::CliError;

pub fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    match &cli.command {
        Command::Roundtrip(a) => commands::cmd_roundtrip(a),
        Command::Commreport(a) => commands::cmd_commreport(a),
        Command::Train(a) => commands::cmd_train(a),
        Command::Classify(a) => commands::cmd_classify(a),
    }
}

pub fn out_dir(cli: &Cli) -> Option<&Path> {
    match &cli.command {
        Command::Roundtrip(a) => a.common.out.as_deref(),
        Command::Commreport(a) => a.common.out.as_deref(),
        Command::Train(a) => a.common.out.as_deref(),
        Command::Classify(a) => a.common.out.as_deref(),
    }
}

pub fn write_files(dir: &Path, outcome: &Outcome) -> Result<(), CliError> {
    let io = |path: &Path| {
        let path = path.to_owned();
        move |source| CliError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    for (name, bytes) in &outcome.files {
        let p = dir.join(name);
        std::fs::write(&p, bytes).map_err(io(&p))?;
    }
    Ok(())
}
