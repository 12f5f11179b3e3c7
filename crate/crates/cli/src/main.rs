use std::path::PathBuf;
use std::process::ExitCode;

use bridgeflow_cli::classical::cmd_classical;
use bridgeflow_cli::simulate::cmd_simulate;
use bridgeflow_cli::solve::cmd_solve;
use bridgeflow_cli::{init_threads, CliError, Config};
use clap::{Args, Parser, Subcommand};

/// Schrödinger bridge solver on point clouds.
#[derive(Parser)]
#[command(name = "bridgeflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output.directory`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed (overrides the seed in the configuration).
    #[arg(long)]
    seed: Option<u64>,
    /// Only print warnings and errors.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the bridge and write factors, densities and controls.
    Solve(Common),
    /// Solve the zero-drift bridge on a 1-D grid by quadrature.
    Classical(Common),
    /// Run closed-loop sample paths with the control of a previous `solve`.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Output directory of the `solve` run.
        #[arg(long)]
        solution: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = match &cli.command {
        Command::Solve(c) | Command::Classical(c) => c,
        Command::Simulate { common, .. } => common,
    };
    let level = if common.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    init_threads()?;

    let (mut config, text) = Config::load(&common.config)?;
    if let Some(seed) = common.seed {
        if let Some(s) = config.solver.as_mut() {
            s.seed = seed;
        }
        if let Some(s) = config.simulate.as_mut() {
            s.seed = seed;
        }
    }
    let out = common.out.clone().unwrap_or_else(|| config.output.directory.clone());
    match &cli.command {
        Command::Solve(_) => {
            let report = cmd_solve(&config, &text, &out)?;
            log::info!("converged after {} outer iterations", report.state.iteration);
        }
        Command::Classical(_) => {
            let report = cmd_classical(&config, &text, &out)?;
            log::info!("converged after {} iterations", report.solution.iterations);
        }
        Command::Simulate { solution, .. } => {
            cmd_simulate(&config, &text, solution, &out)?;
        }
    }
    log::info!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
