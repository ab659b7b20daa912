mod args;
mod commands;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use spn_core::SpnError;

use args::{Cli, Command};

fn exit_code(e: &SpnError) -> u8 {
    match e {
        SpnError::Io { .. } | SpnError::Format { .. } => 2,
        SpnError::Verification(_) => 3,
        _ => 1,
    }
}

fn run(cli: &Cli) -> spn_core::Result<()> {
    match &cli.command {
        Command::Train(a) => commands::cmd_train(a),
        Command::Eval(a) => commands::cmd_eval(a),
        Command::Segment(a) => commands::cmd_segment(a),
        Command::Complexity(a) => commands::cmd_complexity(a),
        Command::Gradcheck(a) => commands::cmd_gradcheck(a),
        Command::BenchKnn(a) => commands::cmd_bench_knn(a),
        Command::Synth(a) => commands::cmd_synth(a),
    }
}

#[cfg(feature = "parallel")]
fn run_with_threads(cli: &Cli) -> spn_core::Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build()
        .map_err(|e| SpnError::Config(format!("cannot start {} threads: {e}", cli.threads)))?;
    pool.install(|| run(cli))
}

#[cfg(not(feature = "parallel"))]
fn run_with_threads(cli: &Cli) -> spn_core::Result<()> {
    if cli.threads > 1 {
        log::warn!(
            "built without the parallel feature; ignoring --threads {}",
            cli.threads
        );
    }
    run(cli)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SPN_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    log::debug!("{cli:?}");
    match run_with_threads(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
