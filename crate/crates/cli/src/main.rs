//! `tsfl`: simulate, estimate, plan and sweep time-sensitive federated
//! learning experiments from TOML configs.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Context, Options};

type Handler = fn(&Context) -> Result<(), error::CliError>;

#[derive(Parser)]
#[command(name = "tsfl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write its trace.
    Simulate(Args),
    /// Run probe simulations and fit bound and timing constants.
    Estimate(Args),
    /// Choose servers and (e, n) from fitted constants.
    Plan(Args),
    /// Run one simulation per value of a swept axis.
    Sweep(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses one per core.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (args, run): (Args, Handler) = match cli.command {
        Command::Simulate(a) => (a, commands::simulate),
        Command::Estimate(a) => (a, commands::estimate),
        Command::Plan(a) => (a, commands::plan),
        Command::Sweep(a) => (a, commands::sweep),
    };
    let opts = Options {
        config: args.config,
        out: args.out,
        seed: args.seed,
        jobs: args.jobs,
    };
    match Context::load(&opts).and_then(|ctx| run(&ctx)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
