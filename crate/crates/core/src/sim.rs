//! Fixed-step scenario execution.
//!
//! Each step reads a snapshot of the broadcast values, measurement errors and
//! gains taken at `t_k`, applies any link changes due at `t_k`, and writes the
//! state at `t_{k+1}`:
//!
//! 1. snapshot
//! 2. topology changes with scheduled time `<= t_k`
//! 3. control inputs on the snapshot
//! 4. Euler step of every agent
//! 5. Euler step of every edge gain
//! 6. triggering variable on the snapshot, triggering-function step, firing
//! 7. broadcasts of fired agents, visible from the next snapshot
//! 8. trace row (every `record_every` steps, and the last step)

use std::collections::BTreeMap;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consensus::{
    self, AgentState, AlgorithmParams, ConsensusError, EdgeGain, GainTable,
};
use crate::signals::{self, ReferenceSignal, SignalError};
use crate::topology::{self, Adjacency, ChangeAction, Edge, TimedTopology, TopologyError};
use crate::trigger::{self, TriggerError, TriggerParams, TriggerState};

/// Identifier written to trace headers for the initial-value generator.
pub const PRNG_ID: &str = "ChaCha20 (rand_chacha 0.9, seed_from_u64); uniform = lo + (hi-lo) * (next_u64 >> 11) * 2^-53";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error(transparent)]
    Trigger(#[from] TriggerError),
    #[error("non-finite {quantity} at step {step} (t={time}s); last good time {last_good_time}s")]
    NonFinite {
        quantity: String,
        step: u64,
        time: f64,
        last_good_time: f64,
    },
}

/// A fixed value or a uniform draw from `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ValueSpec {
    Fixed(f64),
    Uniform { lo: f64, hi: f64 },
}

impl ValueSpec {
    fn draw(&self, rng: &mut ChaCha20Rng) -> f64 {
        match *self {
            ValueSpec::Fixed(v) => v,
            ValueSpec::Uniform { lo, hi } => lo + (hi - lo) * unit_interval(rng),
        }
    }

    fn validate(&self, what: &str) -> Result<(), SimError> {
        let ok = match *self {
            ValueSpec::Fixed(v) => v.is_finite(),
            ValueSpec::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo <= hi,
        };
        if ok {
            Ok(())
        } else {
            Err(SimError::Invalid(format!("{what}: bad value spec {self:?}")))
        }
    }
}

fn unit_interval(rng: &mut ChaCha20Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeGainSpec {
    pub edge: Edge,
    pub sigma: f64,
    pub nu: f64,
    pub c0: ValueSpec,
    pub c_hat0: ValueSpec,
}

/// Complete experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub topology: TimedTopology,
    pub signals: Vec<ReferenceSignal>,
    pub params: AlgorithmParams,
    pub trigger: Vec<TriggerParams>,
    /// One entry per edge of `topology.all_edges()`, in edge order.
    pub gains: Vec<EdgeGainSpec>,
    pub z0: Vec<ValueSpec>,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub record_every: u64,
}

impl Scenario {
    pub fn n(&self) -> usize {
        self.topology.n()
    }

    /// `ceil(horizon / dt)`, treating ratios within 1e-9 of an integer as exact.
    pub fn steps(&self) -> u64 {
        let ratio = self.horizon / self.dt;
        let nearest = ratio.round();
        if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) {
            nearest as u64
        } else {
            ratio.ceil() as u64
        }
    }

    pub fn time_of(&self, step: u64) -> f64 {
        step as f64 * self.dt
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let n = self.n();
        if n == 0 {
            return Err(SimError::Invalid("at least one agent is required".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::Invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon >= self.dt && self.horizon.is_finite()) {
            return Err(SimError::Invalid(format!(
                "horizon must be at least dt, got {}",
                self.horizon
            )));
        }
        if self.record_every == 0 {
            return Err(SimError::Invalid("record_every must be at least 1".into()));
        }
        if self.signals.len() != n || self.trigger.len() != n || self.z0.len() != n {
            return Err(SimError::Invalid(format!(
                "expected {n} signals, trigger entries and z0 entries"
            )));
        }
        for s in &self.signals {
            s.validate()?;
            if let Some(end) = s.end_time() {
                if end < self.horizon {
                    return Err(SignalError::BeyondLastKnot {
                        t: self.horizon,
                        last: end,
                    }
                    .into());
                }
            }
        }
        for t in &self.trigger {
            t.validate()?;
        }
        for (i, z) in self.z0.iter().enumerate() {
            z.validate(&format!("z0 of agent {}", i + 1))?;
        }
        let edges: Vec<Edge> = self.topology.all_edges().into_iter().collect();
        let spec_edges: Vec<Edge> = self.gains.iter().map(|g| g.edge).collect();
        if edges != spec_edges {
            return Err(SimError::Invalid(
                "gain specs must cover every scheduled edge exactly once, in edge order".into(),
            ));
        }
        for g in &self.gains {
            consensus::positive("sigma", g.sigma)?;
            consensus::positive("nu", g.nu)?;
            g.c0.validate(&format!("c0 of edge {}", g.edge))?;
            g.c_hat0.validate(&format!("c_hat0 of edge {}", g.edge))?;
        }
        Ok(())
    }

    /// Draws every randomized initial value from the seeded generator:
    /// `z0` by agent, then `c0`, `c_hat0` for each edge in edge order.
    pub fn resolve_initial_values(&self) -> InitialValues {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        let z0 = self.z0.iter().map(|s| s.draw(&mut rng)).collect();
        let mut c0 = Vec::with_capacity(self.gains.len());
        let mut c_hat0 = Vec::with_capacity(self.gains.len());
        for g in &self.gains {
            c0.push(g.c0.draw(&mut rng));
            c_hat0.push(g.c_hat0.draw(&mut rng));
        }
        InitialValues { z0, c0, c_hat0 }
    }
}

/// Resolved initial values; gain entries follow `Scenario::gains`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialValues {
    pub z0: Vec<f64>,
    pub c0: Vec<f64>,
    pub c_hat0: Vec<f64>,
}

/// Running extrema over every simulated step (not only recorded rows).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suprema {
    /// `sup |e_i|` per agent, including pre-reset values.
    pub e_abs: Vec<f64>,
    /// `inf f_i` per agent, including pre-reset values.
    pub f_min: Vec<f64>,
    /// `sup c_ij` per edge.
    pub c_max: Vec<f64>,
    /// Maximal `a_ij` per edge over the run.
    pub a_max: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRecord {
    pub agent: usize,
    pub step: u64,
    pub time: f64,
    /// Triggering-function value just before the reset; `None` for the initial event.
    pub f_pre: Option<f64>,
    pub x_hat: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopologyLogEntry {
    pub step: u64,
    pub time: f64,
    pub edge: Edge,
    pub action: ChangeAction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: u64,
    pub time: f64,
    pub z: Vec<f64>,
    pub x: Vec<f64>,
    pub x_hat: Vec<f64>,
    pub e: Vec<f64>,
    pub f: Vec<f64>,
    pub x_tilde: Vec<f64>,
    pub c: Vec<f64>,
    pub c_hat: Vec<f64>,
}

/// Run-level metadata carried alongside the series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub prng: String,
    pub seed: u64,
    pub steps: u64,
    pub record_every: u64,
    pub initial: InitialValues,
    pub suprema: Suprema,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub meta: RunMeta,
    /// Edge order of the `c` / `c_hat` columns.
    pub edges: Vec<Edge>,
    pub rows: Vec<TraceRow>,
    pub events: Vec<EventRecord>,
    pub topology_log: Vec<TopologyLogEntry>,
}

impl Trace {
    pub fn n(&self) -> usize {
        self.meta.initial.z0.len()
    }

    pub fn events_of(&self, agent: usize) -> impl Iterator<Item = &EventRecord> {
        self.events.iter().filter(move |e| e.agent == agent)
    }
}

/// What happened during one call to [`Engine::step`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepReport {
    pub applied: Vec<TopologyLogEntry>,
    pub events: Vec<EventRecord>,
}

/// Mutable simulation state; one engine per run.
#[derive(Debug, Clone)]
pub struct Engine {
    scenario: Scenario,
    initial: InitialValues,
    step: u64,
    adjacency: Adjacency,
    next_change: usize,
    agents: Vec<AgentState>,
    triggers: Vec<TriggerState>,
    gains: GainTable,
    suprema: Suprema,
    warnings: Vec<String>,
}

impl Engine {
    /// Resolves initial values and fires the initial event of every agent.
    pub fn new(scenario: &Scenario) -> Result<Self, SimError> {
        scenario.validate()?;
        let initial = scenario.resolve_initial_values();
        let n = scenario.n();

        let mut gains = Vec::with_capacity(scenario.gains.len());
        for (k, g) in scenario.gains.iter().enumerate() {
            consensus::validate_gain_init(g.edge, initial.c0[k], initial.c_hat0[k])?;
            gains.push(EdgeGain {
                edge: g.edge,
                c: initial.c0[k],
                c_hat: initial.c_hat0[k],
                sigma: g.sigma,
                nu: g.nu,
            });
        }

        let adjacency = scenario.topology.graph_at(0.0)?;
        let next_change = scenario
            .topology
            .changes()
            .partition_point(|c| c.time <= 0.0);
        let mut warnings = Vec::new();
        let parts = topology::components(&adjacency);
        if parts.len() > 1 {
            warnings.push(format!(
                "initial graph is disconnected ({} components); consensus runs per component",
                parts.len()
            ));
        }

        let mut agents = Vec::with_capacity(n);
        for i in 0..n {
            let z = initial.z0[i];
            let x = z + scenario.signals[i].eval(0.0)?;
            agents.push(AgentState {
                id: i,
                z,
                x,
                x_hat: x,
            });
        }
        let triggers: Vec<TriggerState> = scenario
            .trigger
            .iter()
            .map(|p| TriggerState::initial(*p))
            .collect();

        let suprema = Suprema {
            e_abs: vec![0.0; n],
            f_min: triggers.iter().map(|t| t.f).collect(),
            c_max: gains.iter().map(|g| g.c).collect(),
            a_max: gains.iter().map(|g| adjacency.get(g.edge.lo(), g.edge.hi())).collect(),
        };

        Ok(Self {
            scenario: scenario.clone(),
            initial,
            step: 0,
            adjacency,
            next_change,
            agents,
            triggers,
            gains: GainTable::new(gains),
            suprema,
            warnings,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn initial_values(&self) -> &InitialValues {
        &self.initial
    }

    /// Index of the next step to execute; the state describes `t = step * dt`.
    pub fn step_index(&self) -> u64 {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.scenario.time_of(self.step)
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn triggers(&self) -> &[TriggerState] {
        &self.triggers
    }

    pub fn gains(&self) -> &GainTable {
        &self.gains
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    pub fn suprema(&self) -> &Suprema {
        &self.suprema
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn step(&mut self) -> Result<StepReport, SimError> {
        let sc = &self.scenario;
        let k = self.step;
        let t = sc.time_of(k);
        let t_next = sc.time_of(k + 1);
        let dt = sc.dt;
        let n = self.agents.len();

        let x_hat: Vec<f64> = self.agents.iter().map(|a| a.x_hat).collect();
        let old_gains = self.gains.clone();

        let mut report = StepReport::default();
        let changes = sc.topology.changes();
        if self.next_change < changes.len() && changes[self.next_change].time <= t {
            while self.next_change < changes.len() && changes[self.next_change].time <= t {
                let c = changes[self.next_change];
                report.applied.push(TopologyLogEntry {
                    step: k,
                    time: t,
                    edge: c.edge,
                    action: c.action,
                });
                self.next_change += 1;
            }
            self.adjacency = sc.topology.graph_at(t)?;
        }
        let adj = &self.adjacency;

        let mu_t = sc.params.mu(t);
        let mut next_agents = Vec::with_capacity(n);
        for (i, agent) in self.agents.iter().enumerate() {
            let u = consensus::control_input(i, &x_hat, &old_gains, adj, mu_t)?;
            let r_next = sc.signals[i].eval(t_next)?;
            next_agents.push(consensus::step_agent(agent, r_next, u, sc.params.gamma(), dt));
        }

        let next_gains = GainTable::new(old_gains.iter().map(|g| {
            let (i, j) = (g.edge.lo(), g.edge.hi());
            consensus::step_gain(g, x_hat[i], x_hat[j], adj.get(i, j), mu_t, dt)
        }));

        let mut next_triggers = Vec::with_capacity(n);
        for (i, trig) in self.triggers.iter().enumerate() {
            let p = trig.params;
            let eta = trigger::eta(i, &x_hat, &old_gains, adj, trig.e, p.alpha, p.beta, mu_t)?;
            let mut stepped = trig.step_trigger(eta, dt);
            stepped.e = trigger::measurement_error(x_hat[i], next_agents[i].x);
            next_triggers.push(stepped);
        }

        let last_good_time = t;
        let bad = |quantity: String| SimError::NonFinite {
            quantity,
            step: k + 1,
            time: t_next,
            last_good_time,
        };
        for (i, a) in next_agents.iter().enumerate() {
            if !a.x.is_finite() {
                return Err(bad(format!("state of agent {}", i + 1)));
            }
            if !next_triggers[i].f.is_finite() {
                return Err(bad(format!("triggering function of agent {}", i + 1)));
            }
        }
        for g in next_gains.iter() {
            if !(g.c.is_finite() && g.c_hat.is_finite()) {
                return Err(bad(format!("gain of edge {}", g.edge)));
            }
        }

        for (i, trig) in next_triggers.iter_mut().enumerate() {
            let s = &mut self.suprema;
            s.e_abs[i] = s.e_abs[i].max(trig.e.abs());
            s.f_min[i] = s.f_min[i].min(trig.f);
            let f_pre = trig.f;
            let fired = trig.check_and_fire(next_agents[i].x, t_next);
            *trig = fired.state;
            if let Some(value) = fired.broadcast {
                next_agents[i].x_hat = value;
                report.events.push(EventRecord {
                    agent: i,
                    step: k + 1,
                    time: t_next,
                    f_pre: Some(f_pre),
                    x_hat: value,
                });
            }
        }
        for (slot, g) in next_gains.iter().enumerate() {
            let s = &mut self.suprema;
            s.c_max[slot] = s.c_max[slot].max(g.c);
            s.a_max[slot] = s.a_max[slot].max(adj.get(g.edge.lo(), g.edge.hi()));
        }

        self.agents = next_agents;
        self.triggers = next_triggers;
        self.gains = next_gains;
        self.step = k + 1;
        Ok(report)
    }
}

// Caches the component partition used for estimation errors; it only changes
// at scheduled change times.
struct ComponentCache {
    applied: usize,
    parts: Vec<Vec<usize>>,
}

impl ComponentCache {
    fn parts_at(&mut self, topo: &TimedTopology, t: f64) -> Result<&[Vec<usize>], SimError> {
        let applied = topo.changes().partition_point(|c| c.time <= t);
        if applied != self.applied || self.parts.is_empty() {
            self.parts = topology::components(&topo.graph_at(t)?);
            self.applied = applied;
        }
        Ok(&self.parts)
    }
}

/// `x_i - mean(r_j, j in component(i))` for every agent at time `t`.
pub fn estimation_errors(
    x: &[f64],
    signals: &[ReferenceSignal],
    parts: &[Vec<usize>],
    t: f64,
) -> Result<Vec<f64>, SignalError> {
    let mut out = vec![0.0; x.len()];
    for part in parts {
        let avg = signals::group_average(signals, part, t)?;
        for &i in part {
            out[i] = x[i] - avg;
        }
    }
    Ok(out)
}

fn snapshot_row(
    engine: &Engine,
    cache: &mut ComponentCache,
) -> Result<TraceRow, SimError> {
    let sc = engine.scenario();
    let t = engine.time();
    let x: Vec<f64> = engine.agents.iter().map(|a| a.x).collect();
    let parts = cache.parts_at(&sc.topology, t)?;
    let x_tilde = estimation_errors(&x, &sc.signals, parts, t)?;
    Ok(TraceRow {
        step: engine.step,
        time: t,
        z: engine.agents.iter().map(|a| a.z).collect(),
        x_hat: engine.agents.iter().map(|a| a.x_hat).collect(),
        e: engine.triggers.iter().map(|s| s.e).collect(),
        f: engine.triggers.iter().map(|s| s.f).collect(),
        x,
        x_tilde,
        c: engine.gains.iter().map(|g| g.c).collect(),
        c_hat: engine.gains.iter().map(|g| g.c_hat).collect(),
    })
}

/// Runs `scenario.steps()` steps and collects the trace.
pub fn run(scenario: &Scenario) -> Result<Trace, SimError> {
    let mut engine = Engine::new(scenario)?;
    let steps = scenario.steps();
    let mut cache = ComponentCache {
        applied: 0,
        parts: Vec::new(),
    };

    let mut rows = vec![snapshot_row(&engine, &mut cache)?];
    let mut events: Vec<EventRecord> = engine
        .agents
        .iter()
        .map(|a| EventRecord {
            agent: a.id,
            step: 0,
            time: 0.0,
            f_pre: None,
            x_hat: a.x_hat,
        })
        .collect();
    let mut topology_log = Vec::new();

    for k in 1..=steps {
        let report = engine.step()?;
        events.extend(report.events);
        topology_log.extend(report.applied);
        if k % scenario.record_every == 0 || k == steps {
            rows.push(snapshot_row(&engine, &mut cache)?);
        }
    }

    let edges: Vec<Edge> = engine.gains.iter().map(|g| g.edge).collect();
    let meta = RunMeta {
        prng: PRNG_ID.to_string(),
        seed: scenario.seed,
        steps,
        record_every: scenario.record_every,
        initial: engine.initial.clone(),
        suprema: engine.suprema.clone(),
        warnings: engine.warnings.clone(),
    };
    Ok(Trace {
        meta,
        edges,
        rows,
        events,
        topology_log,
    })
}

/// Convenience lookup from edge to its column in trace gain series.
pub fn edge_columns(edges: &[Edge]) -> BTreeMap<Edge, usize> {
    edges.iter().enumerate().map(|(k, e)| (*e, k)).collect()
}
