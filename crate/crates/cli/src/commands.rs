//! Subcommand implementations.

use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use thiserror::Error;

use offloadsim_core::simulator::{probe_run, run, RunOptions, Strategy};

use crate::config::{load_scenario, ConfigError, Overrides};
use crate::output::{self, emit_outputs, fmt_sig};

/// Tolerance on the truthfulness probe's profitable deviation.
const PROBE_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("simulation failed: {0}")]
    Sim(#[from] offloadsim_core::simulator::SimError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Violation(String),
}

impl CliError {
    /// Process exit code: 2 config, 3 i/o, 4 violated invariant or property.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Sim(_) => 2,
            CliError::Io(_) => 3,
            CliError::Violation(_) => 4,
        }
    }
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse()
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Scenario file (JSON); omit for the built-in default scenario.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Admission strategy: dapa, ue, or rs. Overrides the scenario file.
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Option<Strategy>,
    /// Seed override. Also reseeds the topology draw.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Keep every Nth workload sample in the time-series CSVs.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Recount state invariants after every event.
    #[arg(long)]
    pub check_invariants: bool,
    /// Cross-validate every decision against the surplus-form objective.
    #[arg(long)]
    pub oracle_check: bool,
}

pub fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    if args.stride < 1 {
        return Err(ConfigError::Option("--stride must be at least 1".into()).into());
    }
    let overrides = Overrides {
        seed: args.seed,
        strategy: args.strategy,
    };
    let scenario = load_scenario(args.scenario.as_deref(), &overrides)?;
    let options = RunOptions {
        check_invariants: args.check_invariants,
        oracle_check: args.oracle_check,
    };
    let (log, metrics) = run(&scenario, &options)?;
    let summary = emit_outputs(&scenario, &log, &metrics, &args.out, args.stride)?;
    output::print_summary(&summary);
    println!("outputs                       {}", args.out.display());
    if summary.invariant_violations > 0 {
        return Err(CliError::Violation(format!(
            "{} state-invariant violations detected",
            summary.invariant_violations
        )));
    }
    if let Some(oracle) = &summary.oracle {
        if oracle.mismatches > 0 {
            return Err(CliError::Violation(format!(
                "objective cross-check failed on {} of {} decisions",
                oracle.mismatches, oracle.checked
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Comma-separated strategies to run over the shared arrival stream.
    #[arg(long, default_value = "dapa,ue,rs")]
    pub strategies: String,
    /// Scenario file (JSON); omit for the built-in default scenario.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Seed override applied to every strategy.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; each strategy writes to its own subdirectory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Keep every Nth workload sample in the time-series CSVs.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Recount state invariants after every event.
    #[arg(long)]
    pub check_invariants: bool,
    /// Cross-validate every decision against the surplus-form objective.
    #[arg(long)]
    pub oracle_check: bool,
}

pub fn cmd_compare(args: &CompareArgs) -> Result<(), CliError> {
    if args.stride < 1 {
        return Err(ConfigError::Option("--stride must be at least 1".into()).into());
    }
    let strategies = args
        .strategies
        .split(',')
        .map(|s| parse_strategy(s.trim()).map_err(ConfigError::Option))
        .collect::<Result<Vec<_>, _>>()?;
    if strategies.is_empty() {
        return Err(ConfigError::Option("no strategies given".into()).into());
    }
    let options = RunOptions {
        check_invariants: args.check_invariants,
        oracle_check: args.oracle_check,
    };
    let mut rows = Vec::new();
    for strategy in strategies {
        let overrides = Overrides {
            seed: args.seed,
            strategy: Some(strategy),
        };
        let scenario = load_scenario(args.scenario.as_deref(), &overrides)?;
        let (log, metrics) = run(&scenario, &options)?;
        let dir = args.out.join(strategy.as_str());
        let summary = emit_outputs(&scenario, &log, &metrics, &dir, args.stride)?;
        if summary.invariant_violations > 0 {
            return Err(CliError::Violation(format!(
                "{}: {} state-invariant violations detected",
                strategy, summary.invariant_violations
            )));
        }
        rows.push(summary);
    }
    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), fmt_sig);
    println!(
        "{:<6} {:>9} {:>9} {:>9} {:>16} {:>16} {:>14} {:>10} {:>10}",
        "strat", "arrivals", "admitted", "fallback", "mean_latency_s", "final_hour_s", "mean_payment", "std_u", "std_v"
    );
    for s in &rows {
        println!(
            "{:<6} {:>9} {:>9} {:>9} {:>16} {:>16} {:>14} {:>10} {:>10}",
            s.strategy,
            s.arrivals,
            s.admitted,
            s.fallbacks.total,
            opt(s.mean_latency_s),
            opt(s.mean_latency_final_hour_s),
            opt(s.mean_payment),
            s.time_avg_std_users_per_ap
                .map_or("n/a".into(), |v| format!("{v:.3}")),
            s.time_avg_std_tasks_per_server
                .map_or("n/a".into(), |v| format!("{v:.3}")),
        );
    }
    println!("per-strategy outputs under {}", args.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    /// Scenario file (JSON); omit for the built-in default scenario.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Seed override.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Maximum number of probed arrival instants (evenly strided).
    #[arg(long, default_value_t = 200)]
    pub probes: usize,
    /// Deadline misreports evaluated per probed instant.
    #[arg(long, default_value_t = 20)]
    pub misreports: usize,
    /// Optional directory for a probe.csv utility table.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_probe(args: &ProbeArgs) -> Result<(), CliError> {
    let overrides = Overrides {
        seed: args.seed,
        strategy: Some(Strategy::Dapa),
    };
    let scenario = load_scenario(args.scenario.as_deref(), &overrides)?;
    let report = probe_run(&scenario, args.probes, args.misreports)?;
    let max_dev = report.max_profitable_deviation();
    println!("probed arrival instants       {}", report.samples.len());
    println!("misreports per instant        {}", report.misreports_per_event);
    println!(
        "max profitable deviation      {} (tolerance {})",
        max_dev.map_or("n/a (no admissible misreport)".to_string(), fmt_sig),
        fmt_sig(PROBE_TOL)
    );
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("probe.csv"))?);
        writeln!(
            w,
            "user,time,declared,admitted,true_utility,satisfies_true_deadline,truthful_utility"
        )?;
        for sample in &report.samples {
            for row in &sample.report.rows {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{}",
                    sample.user_id,
                    fmt_sig(sample.time),
                    fmt_sig(row.declared_deadline),
                    row.admitted,
                    fmt_sig(row.true_utility),
                    row.satisfies_true_deadline,
                    fmt_sig(sample.report.truthful_utility),
                )?;
            }
        }
        w.flush()?;
        println!("utility table                 {}", dir.join("probe.csv").display());
    }
    match max_dev {
        Some(dev) if dev > PROBE_TOL => Err(CliError::Violation(format!(
            "misreporting gained {dev}; truth-telling should be weakly dominant"
        ))),
        _ => {
            println!("truth-telling is weakly dominant on every probed instant");
            Ok(())
        }
    }
}
