//! `cdnsla`: reproduces the pricing and routing tables and runs policy
//! solves and simulations from JSON configs.

mod commands;
mod config;
mod error;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliError;
use crate::output::{Artifact, Format};

#[derive(Parser)]
#[command(
    name = "cdnsla",
    version,
    about = "CDN pricing equilibria and SLA-aware routing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON config for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output file; stdout when absent. CDNSLA_OUT_DIR replaces its directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Defaults to the --out extension, else csv.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,

    /// Overrides any seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Equilibrium prices, shares and revenues of one or more markets.
    Equilibrium,
    /// Duopoly revenue ratio as one beta varies.
    RatioSweep,
    /// Stationary analysis of a single-server birth-death chain.
    Chain,
    /// Throughput against its upper bound as all rates scale by c.
    Scaling,
    /// Two-stage static routing plan.
    StaticSolve,
    /// Optimal dynamic routing from the uniformized MDP.
    DpSolve,
    /// Discrete-event simulation of one policy.
    Simulate,
    /// Several policies on common random numbers.
    Compare,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Equilibrium => "equilibrium",
            Command::RatioSweep => "ratio-sweep",
            Command::Chain => "chain",
            Command::Scaling => "scaling",
            Command::StaticSolve => "static-solve",
            Command::DpSolve => "dp-solve",
            Command::Simulate => "simulate",
            Command::Compare => "compare",
        }
    }
}

fn dispatch(command: Command, path: &Path, seed: Option<u64>) -> Result<Artifact, CliError> {
    use config::load;
    match command {
        Command::Equilibrium => commands::equilibrium(&load(path)?, path),
        Command::RatioSweep => commands::ratio_sweep_cmd(&load(path)?),
        Command::Chain => commands::chain(&load(path)?),
        Command::Scaling => commands::scaling(&load(path)?, path, seed),
        Command::StaticSolve => commands::static_solve(&load(path)?, path, seed),
        Command::DpSolve => commands::dp_solve(&load(path)?, path, seed),
        Command::Simulate => commands::simulate(&load(path)?, path, seed),
        Command::Compare => commands::compare(&load(path)?, path, seed),
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let Some(path) = cli.config.as_deref() else {
        return Err(CliError::config(
            Path::new("--config"),
            None,
            format!("`{}` needs --config <path>", cli.command.name()),
        ));
    };
    let artifact = dispatch(cli.command, path, cli.seed)?;
    let format = output::resolve_format(cli.format, cli.out.as_deref());
    let target = output::resolve_out(cli.out.as_deref(), cli.command.name(), format);
    output::write(target.as_deref(), &artifact.render(format))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::json!({ "error": e.record() });
            eprintln!("{record}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
