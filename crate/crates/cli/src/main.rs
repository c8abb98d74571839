mod args;
mod commands;
mod error;
mod manifest;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use error::{CliError, CliResult};

fn init_pool(jobs: Option<usize>) -> CliResult<()> {
    let Some(n) = jobs else { return Ok(()) };
    if n == 0 {
        return Err(CliError::usage("--jobs must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::usage(format!("thread pool: {e}")))
}

fn run(cli: &Cli) -> CliResult<()> {
    init_pool(cli.jobs)?;
    match &cli.command {
        Command::GenSynth(a) => commands::gen_synth(a),
        Command::Ingest(a) => commands::ingest_cmd(a),
        Command::Benchmark(a) => commands::benchmark(a),
        Command::RankFactors(a) => commands::rank_factors_cmd(a),
        Command::Stats(a) => commands::stats(a),
        Command::Project(a) => commands::project(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(&cli.log)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
