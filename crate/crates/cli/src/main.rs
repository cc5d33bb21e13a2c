use std::process::ExitCode;

use clap::{Parser, Subcommand};

use offloadsim_cli::commands::{self, CompareArgs, ProbeArgs, RunArgs};

/// Discrete-event simulator for computation offloading at the network edge:
/// a priced allocation strategy with marginal-cost payments, selfish and
/// random baselines, and reproducible CSV/JSON traces.
#[derive(Parser)]
#[command(name = "offloadsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write its trace and summary.
    Run(RunArgs),
    /// Run several strategies over a shared arrival stream and compare.
    Compare(CompareArgs),
    /// Probe deadline misreports against the priced strategy.
    ProbeTruthfulness(ProbeArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => commands::cmd_run(args),
        Command::Compare(args) => commands::cmd_compare(args),
        Command::ProbeTruthfulness(args) => commands::cmd_probe(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
