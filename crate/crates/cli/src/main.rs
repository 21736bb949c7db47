//! `nonlocal-dv`: batch driver for the nonlocal-dv library.
//!
//! Exit status: 0 on success, 1 when `verify` finds a failing property or an
//! I/O error occurs, 2 on a configuration error (with the JSON field path),
//! 3 on a numerical failure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod output;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use config::{Command, ExperimentConfig, SchemaError};
use run::{Context, RunError};

#[derive(Debug, Parser)]
#[command(
    name = "nonlocal-dv",
    version,
    about = "Nonlocal operators with drift: eigenvalues, DV functionals, inverse problems"
)]
struct Cli {
    /// Pipeline to run.
    command: Command,
    /// JSON configuration; `verify` falls back to its bundled default.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for summary.json and CSV outputs.
    #[arg(long, default_value = "nonlocal-dv-out")]
    output_dir: PathBuf,
    /// Overrides the seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

const EXIT_FAILED: u8 = 1;
const EXIT_SCHEMA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn schema_exit(e: &SchemaError) -> ExitCode {
    eprintln!("configuration error at {e}");
    ExitCode::from(EXIT_SCHEMA)
}

fn load(cli: &Cli) -> Result<ExperimentConfig, ExitCode> {
    let text = match &cli.config {
        Some(path) => std::fs::read_to_string(path).map_err(|e| {
            eprintln!("cannot read {}: {e}", path.display());
            ExitCode::from(EXIT_FAILED)
        })?,
        None if cli.command == Command::Verify => config::DEFAULT_VERIFY.to_string(),
        None => {
            eprintln!("--config is required for {}", cli.command);
            return Err(ExitCode::from(EXIT_SCHEMA));
        }
    };
    let config = config::parse(&text).map_err(|e| schema_exit(&e))?;
    if let Some(c) = config.command {
        if c != cli.command {
            return Err(schema_exit(&SchemaError::new(
                "$.command",
                format!("configuration is for {c}, not {}", cli.command),
            )));
        }
    }
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NONLOCAL_DV_LOG", "warn")).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("cannot set up {n} threads: {e}");
            return ExitCode::from(EXIT_FAILED);
        }
    }
    let config = match load(&cli) {
        Ok(c) => c,
        Err(code) => return code,
    };
    if let Err(e) = std::fs::create_dir_all(&cli.output_dir) {
        eprintln!("cannot create {}: {e}", cli.output_dir.display());
        return ExitCode::from(EXIT_FAILED);
    }
    let ctx = Context {
        config: &config,
        out: &cli.output_dir,
        seed: cli.seed.or(config.seed).unwrap_or(0),
    };
    log::info!("running {} with seed {}", cli.command, ctx.seed);
    match run::run(cli.command, &ctx) {
        Ok(outcome) => match output::emit(&ctx, cli.command, &outcome) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("cannot write outputs: {e}");
                ExitCode::from(EXIT_FAILED)
            }
        },
        Err(RunError::Schema(e)) => schema_exit(&e),
        Err(RunError::Numerical(nonlocal_dv::Error::Io(e))) => {
            eprintln!("I/O error: {e}");
            ExitCode::from(EXIT_FAILED)
        }
        Err(RunError::Numerical(e)) => {
            eprintln!("numerical failure: {e}");
            ExitCode::from(EXIT_NUMERICAL)
        }
        Err(RunError::Failed(n)) => {
            eprintln!("{n} properties failed");
            ExitCode::from(EXIT_FAILED)
        }
    }
}
