//! Subcommand implementations behind the `etdac` binary. Each command writes
//! its human-readable output to the given sink and reports failures as a
//! [`CliError`] that maps onto the process exit code.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use etdac::analysis::{self, Status, VerifyOptions};
use etdac::scenario_file::{self, ScenarioFileError};
use etdac::sim::{self, Scenario, SimError, Trace};
use etdac::topology;
use etdac::trace_io::{self, TraceIoError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}:\n{source}")]
    Scenario {
        path: String,
        #[source]
        source: ScenarioFileError,
    },
    #[error("{0}")]
    Trace(#[from] TraceIoError),
    #[error("{0}")]
    Io(#[from] io::Error),
    #[error("invalid scenario: {0}")]
    Invalid(SimError),
    #[error("simulation aborted: {0}")]
    Numerical(SimError),
    #[error("{0}")]
    Analysis(#[from] analysis::AnalysisError),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Verification(_) => EXIT_VERIFY,
            _ => EXIT_USAGE,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::NonFinite { .. } => CliError::Numerical(e),
            other => CliError::Invalid(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunArgs {
    /// A scenario file path, or the name of a bundled scenario.
    pub scenario: String,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub record_every: Option<u64>,
}

/// Reads `spec` as a file if it exists, otherwise as a bundled scenario name.
pub fn load_scenario_arg(spec: &str) -> Result<Scenario, CliError> {
    let (label, text) = if Path::new(spec).is_file() {
        (spec.to_string(), fs::read_to_string(spec)?)
    } else if let Some(text) = scenario_file::bundled(spec) {
        (format!("bundled scenario {spec}"), text.to_string())
    } else {
        return Err(CliError::Usage(format!(
            "no scenario file {spec:?}; bundled scenarios are {}",
            scenario_file::BUNDLED.join(", ")
        )));
    };
    scenario_file::load_scenario(&text).map_err(|source| CliError::Scenario { path: label, source })
}

pub fn cmd_run(args: &RunArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut scenario = load_scenario_arg(&args.scenario)?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    if let Some(k) = args.record_every {
        scenario.record_every = k;
    }
    let trace = sim::run(&scenario)?;
    trace_io::write_trace(&args.out, &scenario, &trace)?;
    for w in &trace.meta.warnings {
        writeln!(out, "warning: {w}")?;
    }
    writeln!(
        out,
        "{} agents, {} steps of {} s, seed {}: {} events, {} rows written to {}",
        scenario.n(),
        trace.meta.steps,
        scenario.dt,
        scenario.seed,
        trace.events.len(),
        trace.rows.len(),
        args.out.display()
    )?;
    Ok(())
}

fn per_1e4(seconds: f64) -> String {
    format!("{:.1}", seconds * 1e4)
}

pub fn cmd_stats(trace_dir: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let loaded = trace_io::read_trace(trace_dir)?;
    let stats = analysis::interval_stats(&loaded.scenario, &loaded.trace);
    writeln!(out, "inter-event statistics (low, min in 1e-4 s)")?;
    writeln!(
        out,
        "{:>5} {:>10} {:>10} {:>7} {:>14} {:>10} {:>12}",
        "agent", "low", "min", "total", "eta_bar", "e_bar", "sum c_bar"
    )?;
    for a in &stats.agents {
        writeln!(
            out,
            "{:>5} {:>10} {:>10} {:>7} {:>14.6} {:>10.6} {:>12.6}",
            a.agent + 1,
            per_1e4(a.low),
            a.min.map(per_1e4).unwrap_or_else(|| "n/a".into()),
            a.total,
            a.eta_bar,
            a.e_bar,
            a.c_bar.iter().map(|(_, c)| c).sum::<f64>()
        )?;
    }
    writeln!(out, "suprema used (c_bar per edge, zero where the link never existed)")?;
    let s = &loaded.trace.meta.suprema;
    for (k, e) in loaded.trace.edges.iter().enumerate() {
        writeln!(out, "  edge {e}: c_bar = {:.6}, a_max = {}", s.c_max[k], s.a_max[k])?;
    }
    Ok(())
}

pub fn cmd_verify(trace_dir: &Path, opts: &VerifyOptions, out: &mut dyn Write) -> Result<(), CliError> {
    let loaded = trace_io::read_trace(trace_dir)?;
    let report = analysis::verify(&loaded.scenario, &loaded.trace, opts)?;
    write!(out, "{report}")?;
    let failed: Vec<&str> = report
        .checks
        .iter()
        .filter(|c| c.status != Status::Pass)
        .map(|c| c.name)
        .collect();
    if failed.is_empty() {
        writeln!(out, "all {} checks passed", report.checks.len())?;
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "{} of {} checks did not pass: {}",
            failed.len(),
            report.checks.len(),
            failed.join(", ")
        )))
    }
}

/// Component averages labelled by the smallest member of each final
/// component, so a split graph yields one column per surviving group.
fn reference_columns(scenario: &Scenario, trace: &Trace) -> Result<(Vec<usize>, Vec<Vec<f64>>), CliError> {
    let last = trace.rows.last().map(|r| r.time).unwrap_or(0.0);
    let reps: Vec<usize> = topology::components(&scenario.topology.graph_at(last).map_err(SimError::from)?)
        .iter()
        .map(|c| c[0])
        .collect();
    let mut series = Vec::with_capacity(trace.rows.len());
    for r in &trace.rows {
        let parts = topology::components(&scenario.topology.graph_at(r.time).map_err(SimError::from)?);
        let mut row = Vec::with_capacity(reps.len());
        for &rep in &reps {
            let part = parts.iter().find(|p| p.contains(&rep)).expect("components cover all agents");
            row.push(etdac::signals::group_average(&scenario.signals, part, r.time).map_err(SimError::from)?);
        }
        series.push(row);
    }
    Ok((reps, series))
}

/// Per-figure CSV files: references, estimates, errors, gains, triggering functions.
pub fn cmd_export_plots(trace_dir: &Path, out_dir: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let loaded = trace_io::read_trace(trace_dir)?;
    let (sc, trace) = (&loaded.scenario, &loaded.trace);
    let n = trace.n();
    fs::create_dir_all(out_dir)?;
    let (reps, rbar) = reference_columns(sc, trace)?;
    let agent_cols = |prefix: &str| -> Vec<String> { (1..=n).map(|i| format!("{prefix}_{i}")).collect() };
    let rbar_cols: Vec<String> = reps.iter().map(|r| format!("rbar_{}", r + 1)).collect();
    let with_time = |cols: Vec<String>| -> Vec<String> {
        std::iter::once("time".to_string()).chain(cols).collect()
    };

    let mut refs = Vec::with_capacity(trace.rows.len());
    for (r, avg) in trace.rows.iter().zip(&rbar) {
        let mut row = vec![r.time];
        for s in &sc.signals {
            row.push(s.eval(r.time).map_err(SimError::from)?);
        }
        row.extend(avg);
        refs.push(row);
    }
    let mut files = Vec::new();
    let mut emit = |name: &str, header: Vec<String>, rows: Vec<Vec<f64>>| -> Result<(), CliError> {
        trace_io::write_table(&out_dir.join(name), &header, rows)?;
        files.push(name.to_string());
        Ok(())
    };
    emit(
        "fig3_references.csv",
        with_time([agent_cols("r"), rbar_cols.clone()].concat()),
        refs,
    )?;
    emit(
        "fig4_estimates.csv",
        with_time([agent_cols("x"), rbar_cols].concat()),
        trace
            .rows
            .iter()
            .zip(&rbar)
            .map(|(r, avg)| [vec![r.time], r.x.clone(), avg.clone()].concat())
            .collect(),
    )?;
    emit(
        "fig5_errors.csv",
        with_time(agent_cols("xtilde")),
        trace.rows.iter().map(|r| [vec![r.time], r.x_tilde.clone()].concat()).collect(),
    )?;
    let gain_cols = trace
        .edges
        .iter()
        .flat_map(|e| {
            let tag = format!("{}_{}", e.lo() + 1, e.hi() + 1);
            [format!("c_{tag}"), format!("chat_{tag}")]
        })
        .collect();
    emit(
        "fig6_gains.csv",
        with_time(gain_cols),
        trace
            .rows
            .iter()
            .map(|r| {
                let mut row = vec![r.time];
                for k in 0..trace.edges.len() {
                    row.push(r.c[k]);
                    row.push(r.c_hat[k]);
                }
                row
            })
            .collect(),
    )?;
    emit(
        "fig7_trigger.csv",
        with_time(agent_cols("f")),
        trace.rows.iter().map(|r| [vec![r.time], r.f.clone()].concat()).collect(),
    )?;
    for f in files {
        writeln!(out, "{}", out_dir.join(f).display())?;
    }
    Ok(())
}
