//! Checks run over a finished trace: Lyapunov dissipation and its integral
//! form, inter-event statistics against the theoretical lower bound, gain
//! ordering, triggering-function range and convergence windows.
//!
//! Everything here is recomputed from the scenario and the recorded rows, so
//! a trace read back from disk can be verified the same way as a fresh one.

use std::fmt;

use thiserror::Error;

use crate::consensus::EdgeGain;
use crate::linalg::LinalgError;
use crate::signals::{self, SignalBounds, SignalError};
use crate::sim::{self, EventRecord, Scenario, Trace};
use crate::topology::{self, Edge, TopologyError};

/// Slack allowed on gain ordering and on the per-step monotonicity of `ĉ`.
pub const GAIN_TOLERANCE: f64 = 1e-9;
/// Final `max |c - ĉ|` required by the gain-convergence check.
pub const GAIN_GAP_LIMIT: f64 = 0.01;
/// Relative slack on the Lyapunov checks, scaled by `max(1, V(0))`.
pub const LYAPUNOV_RELATIVE_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("Lyapunov parameters belong to a {expected}-agent component, got {got} values")]
    WrongComponent { expected: usize, got: usize },
    #[error("gain on edge {0} does not join two members of the component")]
    ForeignEdge(Edge),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("trace has no rows")]
    EmptyTrace,
    #[error("trace has {trace} agents but the scenario has {scenario}")]
    Mismatch { trace: usize, scenario: usize },
}

/// Constants of the Lyapunov function for one connected component.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovParams {
    /// Agents of the component, ascending.
    pub members: Vec<usize>,
    pub lambda2: f64,
    pub bounds: SignalBounds,
    pub eps_bar: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub mu_bar1: f64,
}

impl LyapunovParams {
    /// Minimal admissible `theta1 = 1 + 2 eps_bar`, `theta2 = 2 + 6 eps_bar`.
    /// A lone agent has a zero Laplacian pseudoinverse, so `eps_bar = 0`.
    pub fn new(members: Vec<usize>, lambda2: f64, gamma: f64, bounds: SignalBounds, mu1: f64) -> Self {
        let n = members.len() as f64;
        let eps_bar = if members.len() < 2 {
            0.0
        } else {
            n.sqrt() / lambda2 * (gamma * bounds.eps1 + bounds.eps2)
        };
        Self {
            members,
            lambda2,
            bounds,
            eps_bar,
            theta1: 1.0 + 2.0 * eps_bar,
            theta2: 2.0 + 6.0 * eps_bar,
            mu_bar1: eps_bar * n * n * mu1,
        }
    }

    /// Parameters for `members`, a connected component of the graph at `t`.
    pub fn for_component(scenario: &Scenario, t: f64, members: &[usize]) -> Result<Self, AnalysisError> {
        let adj = scenario.topology.graph_at(t)?.induced(members);
        let l2 = topology::lambda2(&topology::laplacian(&adj))?;
        let sigs: Vec<_> = members.iter().map(|&i| scenario.signals[i].clone()).collect();
        let bounds = signals::bound_estimate(&sigs, scenario.horizon, scenario.dt)?;
        Ok(Self::new(
            members.to_vec(),
            l2,
            scenario.params.gamma(),
            bounds,
            scenario.params.mu1(),
        ))
    }

    pub fn n(&self) -> usize {
        self.members.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovValue {
    pub v: f64,
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
}

/// `V = V1 + V2 + V3` for one component. `x_tilde` and `f` are indexed like
/// `params.members`; every gain must join two members. The double sum in `V3`
/// runs over ordered pairs, so each undirected edge counts twice.
pub fn lyapunov_value(
    params: &LyapunovParams,
    x_tilde: &[f64],
    f: &[f64],
    gains: &[EdgeGain],
) -> Result<LyapunovValue, AnalysisError> {
    let n = params.n();
    for len in [x_tilde.len(), f.len()] {
        if len != n {
            return Err(AnalysisError::WrongComponent { expected: n, got: len });
        }
    }
    let v1 = 0.5 * x_tilde.iter().map(|v| v * v).sum::<f64>();
    let v2 = params.theta1 * f.iter().sum::<f64>();
    let mut v3 = 0.0;
    for g in gains {
        let inside = |a| params.members.binary_search(&a).is_ok();
        if !(inside(g.edge.lo()) && inside(g.edge.hi())) {
            return Err(AnalysisError::ForeignEdge(g.edge));
        }
        let dc = g.c - params.theta2;
        let dh = g.c_hat - params.theta2;
        v3 += 0.5 * (dc * dc + g.sigma / g.nu * dh * dh);
    }
    Ok(LyapunovValue {
        v: v1 + v2 + v3,
        v1,
        v2,
        v3,
    })
}

/// A connected component over a constant-topology step range.
#[derive(Debug, Clone)]
pub struct Segment {
    pub start_step: u64,
    pub end_step: u64,
    /// Gain columns (into `Trace::edges`) of the present edges inside the component.
    pub gain_columns: Vec<usize>,
    pub params: LyapunovParams,
}

impl Segment {
    pub fn members(&self) -> &[usize] {
        &self.params.members
    }
}

/// First step whose time is at or after `time`, matching the engine's rule.
fn first_step_at(scenario: &Scenario, time: f64) -> u64 {
    let mut k = (time / scenario.dt).ceil().max(0.0) as u64;
    while k > 0 && scenario.time_of(k - 1) >= time {
        k -= 1;
    }
    while scenario.time_of(k) < time {
        k += 1;
    }
    k
}

/// Step indices `0 = b_0 < b_1 < ... = steps` bounding constant-topology intervals.
pub fn topology_breaks(scenario: &Scenario, steps: u64) -> Vec<u64> {
    let mut out = vec![0];
    for c in scenario.topology.changes() {
        let k = first_step_at(scenario, c.time);
        if k > *out.last().unwrap() && k < steps {
            out.push(k);
        }
    }
    out.push(steps);
    out
}

/// Every (interval, component) pair of the run.
pub fn segments(scenario: &Scenario, trace: &Trace) -> Result<Vec<Segment>, AnalysisError> {
    let steps = trace.rows.last().ok_or(AnalysisError::EmptyTrace)?.step;
    let columns = sim::edge_columns(&trace.edges);
    let breaks = topology_breaks(scenario, steps);
    let mut out = Vec::new();
    for w in breaks.windows(2) {
        let t = scenario.time_of(w[0]);
        let adj = scenario.topology.graph_at(t)?;
        for members in topology::components(&adj) {
            let gain_columns = adj
                .edges()
                .into_iter()
                .filter(|e| members.contains(&e.lo()))
                .filter_map(|e| columns.get(&e).copied())
                .collect();
            out.push(Segment {
                start_step: w[0],
                end_step: w[1],
                gain_columns,
                params: LyapunovParams::for_component(scenario, t, &members)?,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DissipationReport {
    pub start_time: f64,
    pub end_time: f64,
    pub members: Vec<usize>,
    pub v0: f64,
    pub tolerance: f64,
    /// Recorded intervals without an event of a member.
    pub flow_intervals: usize,
    pub flow_violations: usize,
    /// Intervals containing at least one reset, checked after removing the jumps.
    pub reset_intervals: usize,
    pub reset_violations: usize,
    /// Smallest `rhs + tol - lhs` over flow intervals; negative means violated.
    pub worst_flow_margin: f64,
    pub worst_violation_time: Option<f64>,
    /// Resets whose pre-reset value was positive.
    pub early_resets: usize,
    /// `V(T) - jumps + gamma * int |x̃|^2`.
    pub integral_lhs: f64,
    /// `V(0) + mu_bar1/mu2 * (exp(-mu2 t0) - exp(-mu2 T))`.
    pub integral_rhs: f64,
}

impl DissipationReport {
    pub fn integral_holds(&self) -> bool {
        self.integral_lhs <= self.integral_rhs + self.tolerance
    }

    pub fn integral_margin(&self) -> f64 {
        self.integral_rhs + self.tolerance - self.integral_lhs
    }
}

fn segment_state(
    scenario: &Scenario,
    trace: &Trace,
    seg: &Segment,
    row: usize,
) -> Result<(Vec<f64>, Vec<f64>, Vec<EdgeGain>), AnalysisError> {
    let r = &trace.rows[row];
    let members = seg.members();
    let avg = signals::group_average(&scenario.signals, members, r.time)?;
    let x_tilde = members.iter().map(|&i| r.x[i] - avg).collect();
    let f = members.iter().map(|&i| r.f[i]).collect();
    let gains = seg
        .gain_columns
        .iter()
        .map(|&k| {
            let spec = &scenario.gains[k];
            EdgeGain {
                edge: trace.edges[k],
                c: r.c[k],
                c_hat: r.c_hat[k],
                sigma: spec.sigma,
                nu: spec.nu,
            }
        })
        .collect();
    Ok((x_tilde, f, gains))
}

/// Pointwise and integral dissipation on one segment. Event resets raise `V2`
/// by `theta1 (f_bar - f_pre)`; those jumps are removed before comparing.
pub fn dissipation_check(
    scenario: &Scenario,
    trace: &Trace,
    seg: &Segment,
) -> Result<DissipationReport, AnalysisError> {
    let p = &seg.params;
    let gamma = scenario.params.gamma();
    let mu2 = scenario.params.mu2();
    let rows: Vec<usize> = trace
        .rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.step >= seg.start_step && r.step <= seg.end_step)
        .map(|(k, _)| k)
        .collect();
    let mut events: Vec<&EventRecord> = trace
        .events
        .iter()
        .filter(|e| e.step > seg.start_step && e.step <= seg.end_step)
        .filter(|e| seg.members().contains(&e.agent))
        .collect();
    events.sort_by_key(|e| e.step);

    let t0 = scenario.time_of(seg.start_step);
    let t_end = scenario.time_of(seg.end_step);
    let mut report = DissipationReport {
        start_time: t0,
        end_time: t_end,
        members: seg.members().to_vec(),
        v0: 0.0,
        tolerance: 0.0,
        flow_intervals: 0,
        flow_violations: 0,
        reset_intervals: 0,
        reset_violations: 0,
        worst_flow_margin: f64::INFINITY,
        worst_violation_time: None,
        early_resets: events.iter().filter(|e| e.f_pre.is_some_and(|f| f > 0.0)).count(),
        integral_lhs: 0.0,
        integral_rhs: 0.0,
    };
    let Some((&first, rest)) = rows.split_first() else {
        return Ok(report);
    };

    let value = |row: usize| -> Result<(f64, f64), AnalysisError> {
        let (xt, f, g) = segment_state(scenario, trace, seg, row)?;
        let v = lyapunov_value(p, &xt, &f, &g)?.v;
        Ok((v, xt.iter().map(|x| x * x).sum::<f64>()))
    };

    let (v0, mut sq_prev) = value(first)?;
    let tol_base = LYAPUNOV_RELATIVE_TOLERANCE * v0.max(1.0);
    report.v0 = v0;
    report.tolerance = tol_base;

    let mut v_prev = v0;
    let mut t_prev = trace.rows[first].time;
    let mut step_prev = trace.rows[first].step;
    let mut next_event = 0;
    let mut total_jump = 0.0;
    let mut integral = 0.0;
    for &row in rest {
        let r = &trace.rows[row];
        let mut jump = 0.0;
        let mut reset = false;
        while next_event < events.len() && events[next_event].step <= r.step {
            let ev = events[next_event];
            if ev.step > step_prev {
                let f_bar = scenario.trigger[ev.agent].f_bar;
                jump += p.theta1 * (f_bar - ev.f_pre.unwrap_or(f_bar));
                reset = true;
            }
            next_event += 1;
        }
        let (v, sq) = value(row)?;
        let h = r.time - t_prev;
        let lhs = (v - jump - v_prev) / h;
        let rhs = -gamma * sq_prev + p.mu_bar1 * (-mu2 * t_prev).exp();
        let margin = rhs + tol_base * (1.0 + h) - lhs;
        if reset {
            report.reset_intervals += 1;
            if margin < 0.0 {
                report.reset_violations += 1;
            }
        } else {
            report.flow_intervals += 1;
            if margin < 0.0 {
                report.flow_violations += 1;
                report.worst_violation_time.get_or_insert(t_prev);
            }
            report.worst_flow_margin = report.worst_flow_margin.min(margin);
        }
        integral += 0.5 * h * (sq_prev + sq);
        total_jump += jump;
        v_prev = v;
        t_prev = r.time;
        step_prev = r.step;
        sq_prev = sq;
    }
    let t_last = t_prev;
    report.integral_lhs = v_prev - total_jump + gamma * integral;
    report.integral_rhs =
        v0 + p.mu_bar1 / mu2 * ((-mu2 * t0).exp() - (-mu2 * t_last).exp());
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentIntervals {
    pub agent: usize,
    pub total: usize,
    /// Smallest gap between consecutive events; `None` below two events.
    pub min: Option<f64>,
    pub min_steps: Option<u64>,
    pub low: f64,
    pub eta_bar: f64,
    pub e_bar: f64,
    /// `(edge, a_max * c_bar)` for every edge touching the agent.
    pub c_bar: Vec<(Edge, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalStats {
    pub agents: Vec<AgentIntervals>,
}

/// Inter-event statistics with `eta_bar_i = beta_i sum_j a_ij c_bar_ij e_bar_i`
/// built from the run suprema.
pub fn interval_stats(scenario: &Scenario, trace: &Trace) -> IntervalStats {
    let s = &trace.meta.suprema;
    let dt = scenario.dt;
    let agents = (0..trace.n())
        .map(|i| {
            let tp = &scenario.trigger[i];
            let c_bar: Vec<(Edge, f64)> = trace
                .edges
                .iter()
                .enumerate()
                .filter(|(_, e)| e.contains(i))
                .map(|(k, e)| (*e, f64::from(s.a_max[k]) * s.c_max[k]))
                .collect();
            let e_bar = s.e_abs[i];
            let eta_bar = tp.beta * c_bar.iter().map(|(_, c)| c).sum::<f64>() * e_bar;
            let steps: Vec<u64> = trace.events_of(i).map(|e| e.step).collect();
            let min_steps = steps.windows(2).map(|w| w[1] - w[0]).min();
            AgentIntervals {
                agent: i,
                total: steps.len(),
                min: min_steps.map(|k| k as f64 * dt),
                min_steps,
                low: tp.f_bar / (eta_bar + tp.delta),
                eta_bar,
                e_bar,
                c_bar,
            }
        })
        .collect();
    IntervalStats { agents }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    NotEvaluable,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::NotEvaluable => "NOT EVALUABLE",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub status: Status,
    /// Worst slack found; negative when the check failed.
    pub margin: Option<f64>,
    pub detail: String,
}

impl CheckResult {
    fn judged(name: &'static str, margin: f64, detail: String) -> Self {
        Self {
            name,
            status: if margin >= 0.0 { Status::Pass } else { Status::Fail },
            margin: Some(margin),
            detail,
        }
    }

    fn not_evaluable(name: &'static str, detail: String) -> Self {
        Self {
            name,
            status: Status::NotEvaluable,
            margin: None,
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub checks: Vec<CheckResult>,
}

impl VerificationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.status == Status::Pass)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let margin = c.margin.map(|m| format!("{m:.6e}")).unwrap_or_else(|| "-".into());
            writeln!(f, "{:<14} {:<22} margin {:>14}  {}", c.status.to_string(), c.name, margin, c.detail)?;
        }
        Ok(())
    }
}

/// Convergence windows: the last `window` seconds of every constant-topology
/// interval that lasts at least `settle + window` seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub convergence_bound: f64,
    pub settle: f64,
    pub window: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            convergence_bound: 0.1,
            settle: 5.0,
            window: 1.0,
        }
    }
}

/// Window `[start, end)`, or `[start, end]` when it closes the run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub start: f64,
    pub end: f64,
    pub closed: bool,
}

impl Window {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && (t < self.end || (self.closed && t <= self.end))
    }
}

pub fn convergence_windows(scenario: &Scenario, trace: &Trace, opts: &VerifyOptions) -> Vec<Window> {
    let Some(last) = trace.rows.last() else {
        return Vec::new();
    };
    let breaks = topology_breaks(scenario, last.step);
    breaks
        .windows(2)
        .filter_map(|w| {
            let (a, b) = (scenario.time_of(w[0]), scenario.time_of(w[1]));
            let closed = w[1] == last.step;
            (b - a >= opts.settle + opts.window - 1e-9).then(|| Window {
                start: b - opts.window,
                end: b,
                closed,
            })
        })
        .collect()
}

/// Largest `|x̃|` over recorded rows inside `window`; `None` if no row falls in it.
pub fn max_error_in(trace: &Trace, window: &Window) -> Option<f64> {
    trace
        .rows
        .iter()
        .filter(|r| window.contains(r.time))
        .map(|r| r.x_tilde.iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .reduce(f64::max)
}

fn check_convergence(scenario: &Scenario, trace: &Trace, opts: &VerifyOptions) -> CheckResult {
    let name = "convergence";
    let windows = convergence_windows(scenario, trace, opts);
    if windows.is_empty() {
        return CheckResult::not_evaluable(
            name,
            format!(
                "no constant-topology interval lasts {} s",
                opts.settle + opts.window
            ),
        );
    }
    let mut margin = f64::INFINITY;
    let mut parts = Vec::new();
    for w in &windows {
        let Some(m) = max_error_in(trace, w) else {
            return CheckResult::not_evaluable(name, format!("no samples in [{}, {}]", w.start, w.end));
        };
        margin = margin.min(opts.convergence_bound - m);
        let close = if w.closed { ']' } else { ')' };
        parts.push(format!("[{}, {}{close} max |x̃| = {m:.6}", w.start, w.end));
    }
    CheckResult::judged(
        name,
        margin,
        format!("{} (bound {})", parts.join("; "), opts.convergence_bound),
    )
}

fn check_gain_ordering(trace: &Trace) -> CheckResult {
    let mut margin = f64::INFINITY;
    let mut worst = String::from("no gains");
    for r in &trace.rows {
        for k in 0..trace.edges.len() {
            let m = (r.c[k] - r.c_hat[k] + GAIN_TOLERANCE).min(r.c_hat[k] - 1.0 + GAIN_TOLERANCE);
            if m < margin {
                margin = m;
                worst = format!(
                    "edge {} at t = {}: c = {}, ĉ = {}",
                    trace.edges[k], r.time, r.c[k], r.c_hat[k]
                );
            }
        }
    }
    if trace.edges.is_empty() {
        return CheckResult::not_evaluable("gain_ordering", worst);
    }
    CheckResult::judged("gain_ordering", margin, format!("tightest {worst}"))
}

fn check_c_hat_monotone(trace: &Trace) -> CheckResult {
    if trace.edges.is_empty() || trace.rows.len() < 2 {
        return CheckResult::not_evaluable("c_hat_monotone", "no gain series".into());
    }
    let mut margin = f64::INFINITY;
    for w in trace.rows.windows(2) {
        let allowance = GAIN_TOLERANCE * (w[1].step - w[0].step) as f64;
        for k in 0..trace.edges.len() {
            margin = margin.min(w[1].c_hat[k] - w[0].c_hat[k] + allowance);
        }
    }
    CheckResult::judged(
        "c_hat_monotone",
        margin,
        format!("ĉ may drop at most {GAIN_TOLERANCE:e} per step"),
    )
}

fn check_gain_convergence(trace: &Trace) -> CheckResult {
    let last = trace.rows.last().expect("checked non-empty");
    if trace.edges.is_empty() {
        return CheckResult::not_evaluable("gain_convergence", "no gains".into());
    }
    let gap = last
        .c
        .iter()
        .zip(&last.c_hat)
        .map(|(c, h)| (c - h).abs())
        .fold(0.0, f64::max);
    CheckResult::judged(
        "gain_convergence",
        GAIN_GAP_LIMIT - gap,
        format!("final max |c - ĉ| = {gap:.3e} (limit {GAIN_GAP_LIMIT})"),
    )
}

fn check_inter_event(stats: &IntervalStats, dt: f64) -> CheckResult {
    let mut margin = f64::INFINITY;
    let mut measured = 0;
    for a in &stats.agents {
        if let Some(min) = a.min {
            measured += 1;
            margin = margin.min(min - (a.low - dt));
        }
    }
    if measured == 0 {
        return CheckResult::not_evaluable("inter_event_bound", "no agent has two events".into());
    }
    CheckResult::judged(
        "inter_event_bound",
        margin,
        format!("min_i >= low_i - dt for {measured} agents"),
    )
}

fn check_trigger_range(scenario: &Scenario, trace: &Trace, stats: &IntervalStats) -> CheckResult {
    let dt = scenario.dt;
    let mut margin = f64::INFINITY;
    for (i, a) in stats.agents.iter().enumerate() {
        let f_bar = scenario.trigger[i].f_bar;
        let floor = -dt * (a.eta_bar + scenario.trigger[i].delta);
        margin = margin.min(trace.meta.suprema.f_min[i] - floor);
        for r in &trace.rows {
            margin = margin.min(r.f[i] - floor).min(f_bar - r.f[i]);
        }
        for ev in trace.events_of(i) {
            if let Some(f_pre) = ev.f_pre {
                margin = margin.min(f_pre - floor);
            }
        }
    }
    CheckResult::judged(
        "trigger_range",
        margin,
        "-dt (eta_bar + delta) <= f <= f_bar on rows, pre-reset values and run minima".into(),
    )
}

fn check_reset_exact(scenario: &Scenario, trace: &Trace) -> CheckResult {
    let mut checked = 0;
    let mut bad = Vec::new();
    let mut idx = 0;
    for ev in &trace.events {
        while idx < trace.rows.len() && trace.rows[idx].step < ev.step {
            idx += 1;
        }
        if idx < trace.rows.len() && trace.rows[idx].step == ev.step {
            checked += 1;
            let f = trace.rows[idx].f[ev.agent];
            if f != scenario.trigger[ev.agent].f_bar {
                bad.push(format!("agent {} at t = {}: f = {f}", ev.agent + 1, ev.time));
            }
        }
    }
    if checked == 0 {
        return CheckResult::not_evaluable("reset_exact", "no event lands on a recorded row".into());
    }
    let status = if bad.is_empty() { Status::Pass } else { Status::Fail };
    CheckResult {
        name: "reset_exact",
        status,
        margin: None,
        detail: if bad.is_empty() {
            format!("{checked} resets on recorded rows restore f_bar exactly")
        } else {
            format!("{} of {checked} resets off: {}", bad.len(), bad[0])
        },
    }
}

fn check_broadcast_hold(trace: &Trace) -> CheckResult {
    let n = trace.n();
    let mut held = vec![None; n];
    let mut idx = 0;
    let mut bad = 0usize;
    let mut first_bad = String::new();
    for r in &trace.rows {
        while idx < trace.events.len() && trace.events[idx].step <= r.step {
            let ev = &trace.events[idx];
            held[ev.agent] = Some(ev.x_hat);
            idx += 1;
        }
        for i in 0..n {
            if held[i].is_some_and(|v| v != r.x_hat[i]) {
                if bad == 0 {
                    first_bad = format!("agent {} at t = {}", i + 1, r.time);
                }
                bad += 1;
            }
        }
    }
    CheckResult {
        name: "broadcast_hold",
        status: if bad == 0 { Status::Pass } else { Status::Fail },
        margin: None,
        detail: if bad == 0 {
            "x̂ equals the last broadcast on every row".into()
        } else {
            format!("{bad} mismatches, first {first_bad}")
        },
    }
}

fn check_lyapunov(reports: &[DissipationReport]) -> (CheckResult, CheckResult) {
    if reports.is_empty() {
        return (
            CheckResult::not_evaluable("dissipation", "no segments".into()),
            CheckResult::not_evaluable("integral_bound", "no segments".into()),
        );
    }
    let mut margin = f64::INFINITY;
    let mut violations = 0;
    let mut flow = 0;
    let mut reset_violations = 0;
    let mut early = 0;
    for r in reports {
        flow += r.flow_intervals;
        violations += r.flow_violations;
        reset_violations += r.reset_violations;
        early += r.early_resets;
        margin = margin.min(r.worst_flow_margin / r.tolerance.max(f64::MIN_POSITIVE));
    }
    let dissipation = CheckResult {
        name: "dissipation",
        status: if violations == 0 && early == 0 { Status::Pass } else { Status::Fail },
        margin: Some(margin),
        detail: format!(
            "{violations} violations over {flow} reset-free intervals in {} segments; \
             {reset_violations} in jump-compensated reset intervals; {early} resets with f > 0 \
             (margin in units of tolerance)",
            reports.len()
        ),
    };
    let worst = reports
        .iter()
        .min_by(|a, b| {
            (a.integral_margin() / a.tolerance)
                .total_cmp(&(b.integral_margin() / b.tolerance))
        })
        .unwrap();
    let integral = CheckResult::judged(
        "integral_bound",
        reports
            .iter()
            .map(|r| r.integral_margin())
            .fold(f64::INFINITY, f64::min),
        format!(
            "tightest segment [{}, {}] agents {:?}: lhs {:.6e} <= rhs {:.6e} + tol {:.3e}",
            worst.start_time,
            worst.end_time,
            worst.members.iter().map(|i| i + 1).collect::<Vec<_>>(),
            worst.integral_lhs,
            worst.integral_rhs,
            worst.tolerance
        ),
    );
    (dissipation, integral)
}

/// Runs every check. Structural problems (empty trace, mismatched scenario)
/// are errors; failed properties are report entries.
pub fn verify(scenario: &Scenario, trace: &Trace, opts: &VerifyOptions) -> Result<VerificationReport, AnalysisError> {
    if trace.rows.is_empty() {
        return Err(AnalysisError::EmptyTrace);
    }
    if trace.n() != scenario.n() {
        return Err(AnalysisError::Mismatch {
            trace: trace.n(),
            scenario: scenario.n(),
        });
    }
    let stats = interval_stats(scenario, trace);
    let reports = segments(scenario, trace)?
        .iter()
        .map(|s| dissipation_check(scenario, trace, s))
        .collect::<Result<Vec<_>, _>>()?;
    let (dissipation, integral) = check_lyapunov(&reports);
    Ok(VerificationReport {
        checks: vec![
            check_convergence(scenario, trace, opts),
            check_inter_event(&stats, scenario.dt),
            check_gain_ordering(trace),
            check_c_hat_monotone(trace),
            check_gain_convergence(trace),
            check_trigger_range(scenario, trace, &stats),
            check_reset_exact(scenario, trace),
            check_broadcast_hold(trace),
            dissipation,
            integral,
        ],
    })
}
