//! Trace directories: CSV series plus a JSON run header.
//!
//! | file           | columns                                                         |
//! |----------------|-----------------------------------------------------------------|
//! | `agents.csv`   | `time`, then `z_i,x_i,xhat_i,e_i,f_i,xtilde_i` per agent        |
//! | `gains.csv`    | `time`, then `c_i_j,chat_i_j` per edge                          |
//! | `events.csv`   | `agent,time,f_pre,xhat` (`f_pre` empty for the initial event)   |
//! | `topology.csv` | `time,i,j,action` for every applied link change                 |
//! | `header.json`  | scenario, resolved initial draws, PRNG id, run suprema          |
//!
//! Numbers are written with 12 significant digits. Agent ids are one-based.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario_file::{ScenarioFile, ScenarioFileError};
use crate::sim::{EventRecord, RunMeta, Scenario, TopologyLogEntry, Trace, TraceRow};
use crate::topology::{ChangeAction, Edge};

pub const FORMAT_ID: &str = "etdac-trace/1";
pub const AGENTS_FILE: &str = "agents.csv";
pub const GAINS_FILE: &str = "gains.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const TOPOLOGY_FILE: &str = "topology.csv";
pub const HEADER_FILE: &str = "header.json";

const AGENT_SERIES: [&str; 6] = ["z", "x", "xhat", "e", "f", "xtilde"];

#[derive(Debug, Error)]
pub enum TraceIoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {message}")]
    Malformed { path: String, message: String },
    #[error("scenario embedded in header is invalid: {0}")]
    Scenario(#[from] ScenarioFileError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub n: usize,
    pub dt: f64,
    pub horizon: f64,
    /// Edge order of the gain columns, one-based.
    pub edges: Vec<[usize; 2]>,
    pub scenario: ScenarioFile,
    pub run: RunMeta,
}

/// `%.12g`-style formatting: 12 significant digits, trailing zeros trimmed,
/// scientific notation outside `1e-5 <= |v| < 1e12`.
pub fn format_sig12(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{v:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> TraceIoError + '_ {
    move |source| TraceIoError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> TraceIoError + '_ {
    move |source| TraceIoError::Csv {
        path: path.display().to_string(),
        source,
    }
}

fn malformed(path: &Path, message: impl Into<String>) -> TraceIoError {
    TraceIoError::Malformed {
        path: path.display().to_string(),
        message: message.into(),
    }
}

fn edge_label(e: &Edge) -> String {
    format!("{}_{}", e.lo() + 1, e.hi() + 1)
}

/// Writes every trace file into `dir`, creating it if needed.
pub fn write_trace(dir: &Path, scenario: &Scenario, trace: &Trace) -> Result<(), TraceIoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let n = trace.n();

    let path = dir.join(AGENTS_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    let mut head = vec!["time".to_string()];
    for i in 1..=n {
        head.extend(AGENT_SERIES.iter().map(|s| format!("{s}_{i}")));
    }
    w.write_record(&head).map_err(csv_err(&path))?;
    for row in &trace.rows {
        let mut rec = Vec::with_capacity(1 + 6 * n);
        rec.push(format_sig12(row.time));
        for i in 0..n {
            for v in [row.z[i], row.x[i], row.x_hat[i], row.e[i], row.f[i], row.x_tilde[i]] {
                rec.push(format_sig12(v));
            }
        }
        w.write_record(&rec).map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;

    let path = dir.join(GAINS_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    let mut head = vec!["time".to_string()];
    for e in &trace.edges {
        head.push(format!("c_{}", edge_label(e)));
        head.push(format!("chat_{}", edge_label(e)));
    }
    w.write_record(&head).map_err(csv_err(&path))?;
    for row in &trace.rows {
        let mut rec = vec![format_sig12(row.time)];
        for k in 0..trace.edges.len() {
            rec.push(format_sig12(row.c[k]));
            rec.push(format_sig12(row.c_hat[k]));
        }
        w.write_record(&rec).map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;

    let path = dir.join(EVENTS_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    w.write_record(["agent", "time", "f_pre", "xhat"])
        .map_err(csv_err(&path))?;
    for ev in &trace.events {
        w.write_record([
            (ev.agent + 1).to_string(),
            format_sig12(ev.time),
            ev.f_pre.map(format_sig12).unwrap_or_default(),
            format_sig12(ev.x_hat),
        ])
        .map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;

    let path = dir.join(TOPOLOGY_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    w.write_record(["time", "i", "j", "action"])
        .map_err(csv_err(&path))?;
    for entry in &trace.topology_log {
        let action = match entry.action {
            ChangeAction::Add => "add",
            ChangeAction::Remove => "remove",
        };
        w.write_record([
            format_sig12(entry.time),
            (entry.edge.lo() + 1).to_string(),
            (entry.edge.hi() + 1).to_string(),
            action.to_string(),
        ])
        .map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;

    let header = TraceHeader {
        format: FORMAT_ID.to_string(),
        n,
        dt: scenario.dt,
        horizon: scenario.horizon,
        edges: trace.edges.iter().map(|e| [e.lo() + 1, e.hi() + 1]).collect(),
        scenario: ScenarioFile::from_scenario(scenario),
        run: trace.meta.clone(),
    };
    let path = dir.join(HEADER_FILE);
    let mut text = serde_json::to_string_pretty(&header).map_err(|source| TraceIoError::Json {
        path: path.display().to_string(),
        source,
    })?;
    text.push('\n');
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(())
}

/// Writes a numeric table with a header row, numbers at 12 significant digits.
pub fn write_table(
    path: &Path,
    header: &[String],
    rows: impl IntoIterator<Item = Vec<f64>>,
) -> Result<(), TraceIoError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(row.into_iter().map(format_sig12))
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// A trace read back from disk, with the scenario that produced it.
#[derive(Debug, Clone)]
pub struct LoadedTrace {
    pub header: TraceHeader,
    pub scenario: Scenario,
    pub trace: Trace,
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), TraceIoError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let head = r
        .headers()
        .map_err(csv_err(path))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok((head, rows))
}

fn parse_num(path: &Path, s: &str) -> Result<f64, TraceIoError> {
    s.trim()
        .parse()
        .map_err(|_| malformed(path, format!("not a number: {s:?}")))
}

fn step_of(time: f64, dt: f64) -> u64 {
    (time / dt).round() as u64
}

/// Reads a directory written by [`write_trace`]. Times are snapped back onto
/// the `k * dt` grid.
pub fn read_trace(dir: &Path) -> Result<LoadedTrace, TraceIoError> {
    let path = dir.join(HEADER_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let header: TraceHeader = serde_json::from_str(&text).map_err(|source| TraceIoError::Json {
        path: path.display().to_string(),
        source,
    })?;
    if header.format != FORMAT_ID {
        return Err(malformed(&path, format!("unknown format {:?}", header.format)));
    }
    let scenario = header.scenario.to_scenario()?;
    let n = header.n;
    let dt = header.dt;
    let edges = header
        .edges
        .iter()
        .map(|&[a, b]| {
            if a == 0 || b == 0 {
                return Err(malformed(&path, "edge ids are one-based"));
            }
            Edge::new(a - 1, b - 1).map_err(|e| malformed(&path, e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let m = edges.len();

    let path = dir.join(AGENTS_FILE);
    let (head, agent_rows) = read_table(&path)?;
    if head.len() != 1 + 6 * n {
        return Err(malformed(&path, format!("expected {} columns", 1 + 6 * n)));
    }
    let gpath = dir.join(GAINS_FILE);
    let (ghead, gain_rows) = read_table(&gpath)?;
    if ghead.len() != 1 + 2 * m {
        return Err(malformed(&gpath, format!("expected {} columns", 1 + 2 * m)));
    }
    if gain_rows.len() != agent_rows.len() {
        return Err(malformed(&gpath, "row count differs from agents.csv"));
    }

    let mut rows = Vec::with_capacity(agent_rows.len());
    for (arow, grow) in agent_rows.iter().zip(&gain_rows) {
        if arow.len() != head.len() || grow.len() != ghead.len() {
            return Err(malformed(&path, "ragged row"));
        }
        let step = step_of(parse_num(&path, &arow[0])?, dt);
        let mut cols: [Vec<f64>; 6] = Default::default();
        for i in 0..n {
            for (s, col) in cols.iter_mut().enumerate() {
                col.push(parse_num(&path, &arow[1 + 6 * i + s])?);
            }
        }
        let [z, x, x_hat, e, f, x_tilde] = cols;
        let mut c = Vec::with_capacity(m);
        let mut c_hat = Vec::with_capacity(m);
        for k in 0..m {
            c.push(parse_num(&gpath, &grow[1 + 2 * k])?);
            c_hat.push(parse_num(&gpath, &grow[2 + 2 * k])?);
        }
        rows.push(TraceRow {
            step,
            time: step as f64 * dt,
            z,
            x,
            x_hat,
            e,
            f,
            x_tilde,
            c,
            c_hat,
        });
    }

    let path = dir.join(EVENTS_FILE);
    let (_, event_rows) = read_table(&path)?;
    let mut events = Vec::with_capacity(event_rows.len());
    for r in &event_rows {
        if r.len() != 4 {
            return Err(malformed(&path, "expected 4 columns"));
        }
        let agent: usize = r[0]
            .parse()
            .map_err(|_| malformed(&path, format!("bad agent id {:?}", r[0])))?;
        if agent == 0 || agent > n {
            return Err(malformed(&path, format!("agent id {agent} out of range")));
        }
        let step = step_of(parse_num(&path, &r[1])?, dt);
        let f_pre = if r[2].is_empty() {
            None
        } else {
            Some(parse_num(&path, &r[2])?)
        };
        events.push(EventRecord {
            agent: agent - 1,
            step,
            time: step as f64 * dt,
            f_pre,
            x_hat: parse_num(&path, &r[3])?,
        });
    }

    let path = dir.join(TOPOLOGY_FILE);
    let (_, topo_rows) = read_table(&path)?;
    let mut topology_log = Vec::with_capacity(topo_rows.len());
    for r in &topo_rows {
        if r.len() != 4 {
            return Err(malformed(&path, "expected 4 columns"));
        }
        let id = |s: &str| -> Result<usize, TraceIoError> {
            match s.parse::<usize>() {
                Ok(v) if v >= 1 => Ok(v - 1),
                _ => Err(malformed(&path, format!("bad agent id {s:?}"))),
            }
        };
        let edge = Edge::new(id(&r[1])?, id(&r[2])?).map_err(|e| malformed(&path, e.to_string()))?;
        let action = match r[3].as_str() {
            "add" => ChangeAction::Add,
            "remove" => ChangeAction::Remove,
            other => return Err(malformed(&path, format!("bad action {other:?}"))),
        };
        let step = step_of(parse_num(&path, &r[0])?, dt);
        topology_log.push(TopologyLogEntry {
            step,
            time: step as f64 * dt,
            edge,
            action,
        });
    }

    let trace = Trace {
        meta: header.run.clone(),
        edges,
        rows,
        events,
        topology_log,
    };
    Ok(LoadedTrace {
        header,
        scenario,
        trace,
    })
}
