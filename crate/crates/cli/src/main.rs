//! `gestauth`: one binary over the gesture-authentication pipeline. Settings
//! resolve with flag > GESTAUTH_* environment variable > config file >
//! built-in default, and every run echoes its resolved configuration into the
//! output directory so results stay reproducible from the artifacts alone.

mod args;
mod commands;
mod config;
mod plots;

use std::process::ExitCode;

use clap::Parser;

/// Split by who has to act: `Input` means the invocation or its files need
/// fixing (exit 2, same code clap uses for usage errors); `Numerical` means
/// the pipeline itself failed on valid input (exit 3).
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

fn run(cli: &args::Cli) -> Result<(), CliError> {
    let mut bag = config::ConfigBag::load(cli.config.as_deref())?;
    match &cli.command {
        args::Command::Ingest(a) => commands::cmd_ingest(&mut bag, a),
        args::Command::Simulate(a) => commands::cmd_simulate(&mut bag, a),
        args::Command::TrainAuth(a) => commands::cmd_train_auth(&mut bag, a),
        args::Command::TrainVae(a) => commands::cmd_train_vae(&mut bag, a),
        args::Command::Generate(a) => commands::cmd_generate(&mut bag, a),
        args::Command::Evaluate(a) => commands::cmd_evaluate(&mut bag, a),
        args::Command::Tstr(a) => commands::cmd_tstr(&mut bag, a),
        args::Command::Sweep(a) => commands::cmd_sweep(&mut bag, a, cli.jobs),
    }
}

fn main() -> ExitCode {
    let cli = args::Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
