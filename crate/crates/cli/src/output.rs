//! Machine-readable run outputs.
//!
//! A run directory holds:
//! - `events.csv`: one row per join/leave event,
//!   `time,kind,user,i,j,lt,lf,lc,ltotal,payment,fallback`;
//! - `workload_ap.csv` / `workload_server.csv`: long-format occupancy
//!   series, `time,id,count`, one row per AP/server per sampled event;
//! - `users.csv`: one row per admitted user,
//!   `user,Tk,Tkmin,ltotal,ratio,payment,valuation,cost`;
//! - `summary.json`: scalar aggregates plus the scenario echo;
//! - `scenario.resolved.json`: the resolved scenario at full float
//!   precision, reloadable for an exact replay.
//!
//! Floats in the CSVs and in `summary.json` carry 12 significant digits.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use offloadsim_core::mechanism::AdmissionOutcome;
use offloadsim_core::simulator::{EventKind, FallbackCounts, OracleStats};
use offloadsim_core::{EventLog64, RunMetrics64, Scenario64};

pub const EVENTS_HEADER: &str = "time,kind,user,i,j,lt,lf,lc,ltotal,payment,fallback";
pub const WORKLOAD_HEADER: &str = "time,id,count";
pub const USERS_HEADER: &str = "user,Tk,Tkmin,ltotal,ratio,payment,valuation,cost";

/// Formats a float with 12 significant digits. Fixed-point within a sane
/// magnitude band, scientific outside it; the output is a valid JSON number.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let magnitude = x.abs().log10().floor() as i32;
    if !(-5..15).contains(&magnitude) {
        format!("{:.*e}", 11, x)
    } else {
        let decimals = (11 - magnitude).max(0) as usize;
        format!("{:.*}", decimals, x)
    }
}

/// JSON formatter writing every float with 12 significant digits.
struct SigFigFormatter;

impl serde_json::ser::Formatter for SigFigFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        writer.write_all(fmt_sig(value).as_bytes())
    }

    fn write_f32<W>(&mut self, writer: &mut W, value: f32) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        writer.write_all(fmt_sig(value as f64).as_bytes())
    }
}

/// Serializes a value as JSON with 12-significant-digit floats.
pub fn to_sig_json<T: Serialize>(value: &T) -> io::Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SigFigFormatter);
    value.serialize(&mut ser).map_err(io::Error::other)?;
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct FallbackSummary {
    pub no_coverage: u64,
    pub no_feasible_pair: u64,
    pub deadline_violated: u64,
    pub total: u64,
}

impl From<FallbackCounts> for FallbackSummary {
    fn from(c: FallbackCounts) -> Self {
        Self {
            no_coverage: c.no_coverage,
            no_feasible_pair: c.no_feasible_pair,
            deadline_violated: c.deadline_violated,
            total: c.total(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleSummary {
    pub checked: u64,
    pub mismatches: u64,
}

/// Scalar aggregates of one run plus everything needed to reproduce it.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub strategy: String,
    pub seed: u64,
    pub arrivals: u64,
    pub admitted: u64,
    pub events: u64,
    pub fallbacks: FallbackSummary,
    pub mean_latency_s: Option<f64>,
    pub mean_latency_final_hour_s: Option<f64>,
    pub mean_payment: Option<f64>,
    pub mean_valuation: Option<f64>,
    /// Sum of user payments.
    pub total_payments: f64,
    /// Sum of system valuation increases over priced admissions; budget
    /// balance makes this match `total_payments`.
    pub total_system_credit: f64,
    pub time_avg_std_users_per_ap: Option<f64>,
    pub time_avg_std_tasks_per_server: Option<f64>,
    pub post_admission_deadline_violation_events: u64,
    pub post_admission_deadline_violation_users: u64,
    pub deadline_fallbacks_with_feasible_alternative: u64,
    pub invariant_violations: u64,
    pub oracle: Option<OracleSummary>,
    /// Config echo; see `scenario.resolved.json` for full float precision.
    pub scenario: Scenario64,
}

pub fn build_summary(
    scenario: &Scenario64,
    log: &EventLog64,
    metrics: &RunMetrics64,
) -> Summary {
    let final_hour = metrics.mean_latency_window(scenario.duration_s - 3600.0, scenario.duration_s);
    let std = metrics.time_averaged_workload_std(scenario.duration_s);
    let total_system_credit: f64 = log
        .joins()
        .filter_map(|r| match &r.kind {
            EventKind::Join(AdmissionOutcome::Admitted(a)) => a
                .pricing
                .as_ref()
                .map(|p| p.system_valuation_after - p.system_valuation_before),
            _ => None,
        })
        .sum();
    Summary {
        strategy: scenario.strategy.to_string(),
        seed: scenario.seed,
        arrivals: metrics.arrivals,
        admitted: metrics.admitted(),
        events: log.records.len() as u64,
        fallbacks: metrics.fallbacks.into(),
        mean_latency_s: metrics.mean_latency(),
        mean_latency_final_hour_s: final_hour,
        mean_payment: metrics.mean_payment(),
        mean_valuation: metrics.mean_valuation(),
        total_payments: metrics.total_payments(),
        total_system_credit,
        time_avg_std_users_per_ap: std.map(|s| s.0),
        time_avg_std_tasks_per_server: std.map(|s| s.1),
        post_admission_deadline_violation_events: metrics.post_admission_violation_events,
        post_admission_deadline_violation_users: metrics.post_admission_violation_users,
        deadline_fallbacks_with_feasible_alternative: metrics.deadline_fallbacks_with_alternative,
        invariant_violations: metrics.invariant_violations,
        oracle: metrics.oracle.map(|o: OracleStats| OracleSummary {
            checked: o.checked,
            mismatches: o.mismatches,
        }),
        scenario: scenario.clone(),
    }
}

/// Writes all run outputs into `dir`, creating it if needed. `stride`
/// subsamples the workload series (every `stride`-th event).
pub fn emit_outputs(
    scenario: &Scenario64,
    log: &EventLog64,
    metrics: &RunMetrics64,
    dir: &Path,
    stride: usize,
) -> io::Result<Summary> {
    std::fs::create_dir_all(dir)?;
    write_events_csv(log, &dir.join("events.csv"))?;
    write_workload_csv(metrics, stride, true, &dir.join("workload_ap.csv"))?;
    write_workload_csv(metrics, stride, false, &dir.join("workload_server.csv"))?;
    write_users_csv(metrics, &dir.join("users.csv"))?;
    let summary = build_summary(scenario, log, metrics);
    std::fs::write(dir.join("summary.json"), to_sig_json(&summary)?)?;
    let resolved =
        serde_json::to_vec_pretty(scenario).map_err(io::Error::other)?;
    std::fs::write(dir.join("scenario.resolved.json"), resolved)?;
    Ok(summary)
}

fn write_events_csv(log: &EventLog64, path: &Path) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{EVENTS_HEADER}")?;
    for r in &log.records {
        match &r.kind {
            EventKind::Join(AdmissionOutcome::Admitted(a)) => writeln!(
                w,
                "{},join,{},{},{},{},{},{},{},{},",
                fmt_sig(r.time),
                r.user_id,
                a.pair.ap,
                a.pair.server,
                fmt_sig(a.breakdown.transmission),
                fmt_sig(a.breakdown.transfer),
                fmt_sig(a.breakdown.computation),
                fmt_sig(a.breakdown.total),
                fmt_sig(a.payment),
            )?,
            EventKind::Join(AdmissionOutcome::CloudFallback(reason)) => writeln!(
                w,
                "{},join,{},,,,,,,,{}",
                fmt_sig(r.time),
                r.user_id,
                reason.as_str(),
            )?,
            EventKind::Leave {
                pair,
                breakdown,
                payment,
            } => writeln!(
                w,
                "{},leave,{},{},{},{},{},{},{},{},",
                fmt_sig(r.time),
                r.user_id,
                pair.ap,
                pair.server,
                fmt_sig(breakdown.transmission),
                fmt_sig(breakdown.transfer),
                fmt_sig(breakdown.computation),
                fmt_sig(breakdown.total),
                fmt_sig(*payment),
            )?,
        }
    }
    w.flush()
}

fn write_workload_csv(
    metrics: &RunMetrics64,
    stride: usize,
    aps: bool,
    path: &Path,
) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{WORKLOAD_HEADER}")?;
    for sample in metrics.workload.iter().step_by(stride.max(1)) {
        let counts = if aps { &sample.u } else { &sample.v };
        for (id, &count) in counts.iter().enumerate() {
            writeln!(w, "{},{},{}", fmt_sig(sample.time), id, count)?;
        }
    }
    w.flush()
}

fn write_users_csv(metrics: &RunMetrics64, path: &Path) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{USERS_HEADER}")?;
    for u in &metrics.users {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            u.user_id,
            fmt_sig(u.deadline),
            fmt_sig(u.min_latency),
            fmt_sig(u.total_latency),
            fmt_sig(u.total_latency / u.deadline),
            fmt_sig(u.payment),
            fmt_sig(u.valuation),
            fmt_sig(u.payment - u.valuation),
        )?;
    }
    w.flush()
}

/// One-screen run report for stdout.
pub fn print_summary(summary: &Summary) {
    let pct = if summary.arrivals > 0 {
        100.0 * summary.admitted as f64 / summary.arrivals as f64
    } else {
        0.0
    };
    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), fmt_sig);
    println!("strategy                      {}", summary.strategy);
    println!("seed                          {}", summary.seed);
    println!(
        "arrivals / admitted           {} / {} ({pct:.1}%)",
        summary.arrivals, summary.admitted
    );
    println!(
        "fallbacks                     no_coverage={} no_feasible_pair={} deadline_violated={}",
        summary.fallbacks.no_coverage,
        summary.fallbacks.no_feasible_pair,
        summary.fallbacks.deadline_violated
    );
    println!(
        "mean latency [s]              {} (final hour: {})",
        opt(summary.mean_latency_s),
        opt(summary.mean_latency_final_hour_s)
    );
    println!(
        "mean payment / valuation      {} / {}",
        opt(summary.mean_payment),
        opt(summary.mean_valuation)
    );
    println!(
        "total payments = credit       {} = {}",
        fmt_sig(summary.total_payments),
        fmt_sig(summary.total_system_credit)
    );
    println!(
        "time-avg workload std (u, v)  {}, {}",
        opt(summary.time_avg_std_users_per_ap),
        opt(summary.time_avg_std_tasks_per_server)
    );
    println!(
        "post-admission Tk violations  events={} users={}",
        summary.post_admission_deadline_violation_events,
        summary.post_admission_deadline_violation_users
    );
    println!(
        "deadline fallbacks w/ alt     {}",
        summary.deadline_fallbacks_with_feasible_alternative
    );
    println!(
        "invariant violations          {}",
        summary.invariant_violations
    );
    if let Some(oracle) = &summary.oracle {
        println!(
            "oracle checks                 {} checked / {} mismatched",
            oracle.checked, oracle.mismatches
        );
    }
}
