//! TOML scenario documents.
//!
//! ```toml
//! [agents]
//! count = 2
//!
//! [topology]
//! edges = [[1, 2]]
//! changes = [{ time = 3.0, edge = [1, 2], action = "remove" }]
//!
//! [[signals]]
//! kind = "sinusoid"
//! amplitude = 1.0
//! frequency = 0.5
//! phase = "sin"
//!
//! [[signals]]
//! kind = "constant"
//! value = 2.0
//!
//! [algorithm]
//! gamma = 1.0
//! mu1 = 1.0
//! mu2 = 0.01
//!
//! [trigger]          # each entry: one number, or one number per agent
//! f_bar = 10.0
//! delta = 1.0
//! alpha = 0.01
//! beta = 100.0
//!
//! [gains]            # c0 / c_hat0: a number or { uniform = [lo, hi] }
//! sigma = 5.0
//! nu = 5.0
//! c0 = { uniform = [60.0, 80.0] }
//! c_hat0 = 50.0
//!
//! [sim]              # z0: a number, { uniform = [lo, hi] }, or a per-agent list
//! dt = 1e-4
//! horizon = 12.0
//! seed = 1
//! record_every = 10
//! z0 = { uniform = [-5.0, 5.0] }
//! ```
//!
//! Agent ids are one-based. Unknown keys are rejected.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consensus::AlgorithmParams;
use crate::signals::{Phase, ReferenceSignal};
use crate::sim::{EdgeGainSpec, Scenario, ValueSpec};
use crate::topology::{ChangeAction, Edge, TimedTopology, TopologyChange};
use crate::trigger::TriggerParams;

const PAPER_SEC4: &str = include_str!("../scenarios/paper_sec4.toml");
const TWO_AGENT_ORACLE: &str = include_str!("../scenarios/two_agent_oracle.toml");
const QUIESCENT: &str = include_str!("../scenarios/quiescent.toml");
const SINGLE_AGENT: &str = include_str!("../scenarios/single_agent.toml");

/// Names accepted by [`bundled`].
pub const BUNDLED: [&str; 4] = ["paper_sec4", "two_agent_oracle", "quiescent", "single_agent"];

/// Source text of a bundled scenario.
pub fn bundled(name: &str) -> Option<&'static str> {
    match name {
        "paper_sec4" => Some(PAPER_SEC4),
        "two_agent_oracle" => Some(TWO_AGENT_ORACLE),
        "quiescent" => Some(QUIESCENT),
        "single_agent" => Some(SINGLE_AGENT),
        _ => None,
    }
}

/// One diagnostic, located by line (syntax / schema errors) and section.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub section: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "line {l}, column {c}")?,
            (Some(l), None) => write!(f, "line {l}")?,
            _ => write!(f, "[{}]", self.section)?,
        }
        if self.line.is_some() && !self.section.is_empty() {
            write!(f, " [{}]", self.section)?;
        }
        write!(f, ": {}", self.message)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub struct ScenarioFileError {
    pub diagnostics: Vec<Diagnostic>,
}

impl fmt::Display for ScenarioFileError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, d) in self.diagnostics.iter().enumerate() {
            if k > 0 {
                writeln!(f)?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub agents: AgentsSection,
    pub topology: TopologySection,
    pub signals: Vec<SignalEntry>,
    pub algorithm: AlgorithmSection,
    pub trigger: TriggerSection,
    pub gains: GainsSection,
    pub sim: SimSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentsSection {
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    pub edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub changes: Vec<ChangeEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChangeEntry {
    pub time: f64,
    pub edge: [usize; 2],
    pub action: ChangeAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseEntry {
    Sin,
    Cos,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalEntry {
    Sinusoid {
        amplitude: f64,
        frequency: f64,
        phase: PhaseEntry,
    },
    Constant {
        value: f64,
    },
    PiecewiseLinear {
        knots: Vec<[f64; 2]>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSection {
    pub gamma: f64,
    pub mu1: f64,
    pub mu2: f64,
}

/// A single value for every agent, or one value per agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerAgent {
    All(f64),
    Each(Vec<f64>),
}

impl PerAgent {
    fn expand(&self, n: usize) -> Option<Vec<f64>> {
        match self {
            PerAgent::All(v) => Some(vec![*v; n]),
            PerAgent::Each(vs) if vs.len() == n => Some(vs.clone()),
            PerAgent::Each(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerSection {
    pub f_bar: PerAgent,
    pub delta: PerAgent,
    pub alpha: PerAgent,
    pub beta: PerAgent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformRange {
    pub uniform: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ValueEntry {
    Fixed(f64),
    Uniform(UniformRange),
}

impl From<ValueEntry> for ValueSpec {
    fn from(v: ValueEntry) -> Self {
        match v {
            ValueEntry::Fixed(x) => ValueSpec::Fixed(x),
            ValueEntry::Uniform(UniformRange { uniform: [lo, hi] }) => ValueSpec::Uniform { lo, hi },
        }
    }
}

impl From<ValueSpec> for ValueEntry {
    fn from(v: ValueSpec) -> Self {
        match v {
            ValueSpec::Fixed(x) => ValueEntry::Fixed(x),
            ValueSpec::Uniform { lo, hi } => ValueEntry::Uniform(UniformRange { uniform: [lo, hi] }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitEntry {
    One(ValueEntry),
    Each(Vec<ValueEntry>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSection {
    pub sigma: f64,
    pub nu: f64,
    pub c0: ValueEntry,
    pub c_hat0: ValueEntry,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub overrides: Vec<GainOverride>,
}

/// Per-edge replacement of any of the section defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainOverride {
    pub edge: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c0: Option<ValueEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_hat0: Option<ValueEntry>,
}

fn default_record_every() -> u64 {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    #[serde(default = "default_record_every")]
    pub record_every: u64,
    pub z0: InitEntry,
}

impl ScenarioFile {
    /// Parses TOML text; syntax and schema errors carry line and column.
    pub fn parse(text: &str) -> Result<Self, ScenarioFileError> {
        toml::from_str(text).map_err(|err| {
            let (line, column) = match err.span() {
                Some(span) => {
                    let (l, c) = line_col(text, span.start);
                    (Some(l), Some(c))
                }
                None => (None, None),
            };
            let section = line
                .map(|l| enclosing_section(text, l))
                .unwrap_or_default();
            ScenarioFileError {
                diagnostics: vec![Diagnostic {
                    line,
                    column,
                    section,
                    message: err.message().to_string(),
                }],
            }
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario documents always serialize")
    }

    /// Semantic validation; collects every problem rather than stopping at the first.
    pub fn to_scenario(&self) -> Result<Scenario, ScenarioFileError> {
        let mut diags = Vec::new();
        let mut err = |section: &str, message: String| {
            diags.push(Diagnostic {
                line: None,
                column: None,
                section: section.to_string(),
                message,
            })
        };
        let n = self.agents.count;
        if n == 0 {
            err("agents", "count must be at least 1".into());
        }

        let edge_of = |pair: [usize; 2]| -> Result<Edge, String> {
            let [a, b] = pair;
            if a == 0 || b == 0 || a > n || b > n {
                return Err(format!("edge [{a}, {b}] has an endpoint outside 1..={n}"));
            }
            Edge::new(a - 1, b - 1).map_err(|e| e.to_string())
        };

        let mut base = Vec::new();
        for &pair in &self.topology.edges {
            match edge_of(pair) {
                Ok(e) => base.push(e),
                Err(m) => err("topology", m),
            }
        }
        let mut changes = Vec::new();
        for c in &self.topology.changes {
            match edge_of(c.edge) {
                Ok(edge) => changes.push(TopologyChange {
                    time: c.time,
                    edge,
                    action: c.action,
                }),
                Err(m) => err("topology", m),
            }
        }
        let topology = match TimedTopology::new(n, base, changes) {
            Ok(t) => Some(t),
            Err(e) => {
                err("topology", e.to_string());
                None
            }
        };

        if self.signals.len() != n {
            err(
                "signals",
                format!("expected {n} signal entries, found {}", self.signals.len()),
            );
        }
        let signals: Vec<ReferenceSignal> = self.signals.iter().map(SignalEntry::to_signal).collect();
        for (i, s) in signals.iter().enumerate() {
            if let Err(e) = s.validate() {
                err("signals", format!("agent {}: {e}", i + 1));
            }
        }

        let a = &self.algorithm;
        let params = match AlgorithmParams::new(a.gamma, a.mu1, a.mu2) {
            Ok(p) => Some(p),
            Err(e) => {
                err("algorithm", e.to_string());
                None
            }
        };

        let tr = &self.trigger;
        let mut per_agent = |name: &str, v: &PerAgent| -> Vec<f64> {
            v.expand(n).unwrap_or_else(|| {
                err("trigger", format!("{name} must be a number or a list of {n} numbers"));
                Vec::new()
            })
        };
        let f_bar = per_agent("f_bar", &tr.f_bar);
        let delta = per_agent("delta", &tr.delta);
        let alpha = per_agent("alpha", &tr.alpha);
        let beta = per_agent("beta", &tr.beta);
        let mut trigger = Vec::new();
        if [f_bar.len(), delta.len(), alpha.len(), beta.len()] == [n; 4] {
            for i in 0..n {
                match TriggerParams::new(f_bar[i], delta[i], alpha[i], beta[i]) {
                    Ok(p) => trigger.push(p),
                    Err(e) => err("trigger", format!("agent {}: {e}", i + 1)),
                }
            }
        }

        let mut gains = Vec::new();
        if let Some(topo) = &topology {
            let g = &self.gains;
            for edge in topo.all_edges() {
                gains.push(EdgeGainSpec {
                    edge,
                    sigma: g.sigma,
                    nu: g.nu,
                    c0: g.c0.into(),
                    c_hat0: g.c_hat0.into(),
                });
            }
            for o in &g.overrides {
                let edge = match edge_of(o.edge) {
                    Ok(e) => e,
                    Err(m) => {
                        err("gains", m);
                        continue;
                    }
                };
                let Some(slot) = gains.iter_mut().find(|s| s.edge == edge) else {
                    err("gains", format!("override for edge {edge}, which never exists"));
                    continue;
                };
                if let Some(v) = o.sigma {
                    slot.sigma = v;
                }
                if let Some(v) = o.nu {
                    slot.nu = v;
                }
                if let Some(v) = o.c0 {
                    slot.c0 = v.into();
                }
                if let Some(v) = o.c_hat0 {
                    slot.c_hat0 = v.into();
                }
            }
        }

        let z0: Vec<ValueSpec> = match &self.sim.z0 {
            InitEntry::One(v) => vec![(*v).into(); n],
            InitEntry::Each(vs) => {
                if vs.len() != n {
                    err("sim", format!("z0 list must have {n} entries, found {}", vs.len()));
                }
                vs.iter().map(|&v| v.into()).collect()
            }
        };

        if !diags.is_empty() {
            return Err(ScenarioFileError { diagnostics: diags });
        }
        let scenario = Scenario {
            topology: topology.expect("checked above"),
            signals,
            params: params.expect("checked above"),
            trigger,
            gains,
            z0,
            dt: self.sim.dt,
            horizon: self.sim.horizon,
            seed: self.sim.seed,
            record_every: self.sim.record_every,
        };
        scenario.validate().map_err(|e| ScenarioFileError {
            diagnostics: vec![Diagnostic {
                line: None,
                column: None,
                section: "sim".into(),
                message: e.to_string(),
            }],
        })?;
        Ok(scenario)
    }

    /// Fully explicit document for a scenario: per-agent lists and one gain
    /// override per edge.
    pub fn from_scenario(s: &Scenario) -> Self {
        let pair = |e: &Edge| [e.lo() + 1, e.hi() + 1];
        let each = |f: fn(&TriggerParams) -> f64| PerAgent::Each(s.trigger.iter().map(f).collect());
        let (sigma, nu, c0, c_hat0) = s
            .gains
            .first()
            .map(|g| (g.sigma, g.nu, g.c0.into(), g.c_hat0.into()))
            .unwrap_or((1.0, 1.0, ValueEntry::Fixed(1.0), ValueEntry::Fixed(1.0)));
        ScenarioFile {
            agents: AgentsSection { count: s.n() },
            topology: TopologySection {
                edges: s.topology.base_edges().iter().map(pair).collect(),
                changes: s
                    .topology
                    .changes()
                    .iter()
                    .map(|c| ChangeEntry {
                        time: c.time,
                        edge: pair(&c.edge),
                        action: c.action,
                    })
                    .collect(),
            },
            signals: s.signals.iter().map(SignalEntry::from_signal).collect(),
            algorithm: AlgorithmSection {
                gamma: s.params.gamma(),
                mu1: s.params.mu1(),
                mu2: s.params.mu2(),
            },
            trigger: TriggerSection {
                f_bar: each(|p| p.f_bar),
                delta: each(|p| p.delta),
                alpha: each(|p| p.alpha),
                beta: each(|p| p.beta),
            },
            gains: GainsSection {
                sigma,
                nu,
                c0,
                c_hat0,
                overrides: s
                    .gains
                    .iter()
                    .map(|g| GainOverride {
                        edge: pair(&g.edge),
                        sigma: Some(g.sigma),
                        nu: Some(g.nu),
                        c0: Some(g.c0.into()),
                        c_hat0: Some(g.c_hat0.into()),
                    })
                    .collect(),
            },
            sim: SimSection {
                dt: s.dt,
                horizon: s.horizon,
                seed: s.seed,
                record_every: s.record_every,
                z0: InitEntry::Each(s.z0.iter().map(|&v| v.into()).collect()),
            },
        }
    }
}

impl SignalEntry {
    fn to_signal(&self) -> ReferenceSignal {
        match self {
            SignalEntry::Sinusoid {
                amplitude,
                frequency,
                phase,
            } => ReferenceSignal::Sinusoid {
                amplitude: *amplitude,
                frequency: *frequency,
                phase: match phase {
                    PhaseEntry::Sin => Phase::Sin,
                    PhaseEntry::Cos => Phase::Cos,
                },
            },
            SignalEntry::Constant { value } => ReferenceSignal::Constant { value: *value },
            SignalEntry::PiecewiseLinear { knots } => ReferenceSignal::PiecewiseLinear {
                knots: knots.iter().map(|[t, v]| (*t, *v)).collect(),
            },
        }
    }

    fn from_signal(s: &ReferenceSignal) -> Self {
        match s {
            ReferenceSignal::Sinusoid {
                amplitude,
                frequency,
                phase,
            } => SignalEntry::Sinusoid {
                amplitude: *amplitude,
                frequency: *frequency,
                phase: match phase {
                    Phase::Sin => PhaseEntry::Sin,
                    Phase::Cos => PhaseEntry::Cos,
                },
            },
            ReferenceSignal::Constant { value } => SignalEntry::Constant { value: *value },
            ReferenceSignal::PiecewiseLinear { knots } => SignalEntry::PiecewiseLinear {
                knots: knots.iter().map(|&(t, v)| [t, v]).collect(),
            },
        }
    }
}

/// Parses and validates in one go.
pub fn load_scenario(text: &str) -> Result<Scenario, ScenarioFileError> {
    ScenarioFile::parse(text)?.to_scenario()
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |s| s.chars().count()) + 1;
    (line, column)
}

fn enclosing_section(text: &str, line: usize) -> String {
    text.lines()
        .take(line)
        .filter_map(|l| {
            let l = l.trim();
            l.starts_with('[').then(|| l.trim_matches(|c| c == '[' || c == ']').to_string())
        })
        .last()
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bundled_scenarios_load() {
        for name in BUNDLED {
            let text = bundled(name).unwrap();
            load_scenario(text).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        assert!(bundled("nope").is_none());
    }

    #[test]
    fn eight_agent_scenario_shape() {
        let s = load_scenario(bundled("paper_sec4").unwrap()).unwrap();
        assert_eq!(s.n(), 8);
        assert_eq!(s.dt, 1e-4);
        assert_eq!(s.horizon, 12.0);
        let g3 = s.topology.graph_at(3.0).unwrap();
        let g6 = s.topology.graph_at(6.0).unwrap();
        let e27 = Edge::new(1, 6).unwrap();
        let e45 = Edge::new(3, 4).unwrap();
        assert!(g3.has_edge(e27) && g3.has_edge(e45));
        assert!(!g6.has_edge(e27) && !g6.has_edge(e45));
        assert_eq!(
            crate::topology::components(&g6),
            vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7]]
        );
        let init = s.resolve_initial_values();
        assert!(init.c0.iter().all(|c| (60.0..=80.0).contains(c)));
        assert!(init.c_hat0.iter().all(|&c| c == 50.0));
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let text = bundled("two_agent_oracle")
            .unwrap()
            .replace("gamma = ", "gama = 1.0\ngamma = ");
        let err = ScenarioFile::parse(&text).unwrap_err();
        let d = &err.diagnostics[0];
        assert!(d.line.is_some());
        assert_eq!(d.section, "algorithm");
        assert!(d.message.contains("gama"), "{}", d.message);
    }

    #[test]
    fn syntax_errors_are_located() {
        let err = ScenarioFile::parse("[agents]\ncount = \n").unwrap_err();
        assert_eq!(err.diagnostics[0].line, Some(2));
    }

    #[test]
    fn semantic_errors_are_collected() {
        let text = bundled("two_agent_oracle")
            .unwrap()
            .replace("edges = [[1, 2]]", "edges = [[1, 3]]")
            .replace("alpha = 0.5", "alpha = 2.0");
        let err = load_scenario(&text).unwrap_err();
        let sections: Vec<&str> = err.diagnostics.iter().map(|d| d.section.as_str()).collect();
        assert!(sections.contains(&"topology"), "{err}");
        assert!(sections.contains(&"trigger"), "{err}");
    }

    #[test]
    fn explicit_document_round_trips() {
        for name in BUNDLED {
            let s = load_scenario(bundled(name).unwrap()).unwrap();
            let doc = ScenarioFile::from_scenario(&s);
            let again = load_scenario(&doc.to_toml()).unwrap();
            assert_eq!(again, s, "{name}");
        }
    }

    fn arb_value() -> impl Strategy<Value = ValueEntry> {
        prop_oneof![
            (1.0f64..100.0).prop_map(ValueEntry::Fixed),
            (1.0f64..50.0, 0.0f64..50.0)
                .prop_map(|(lo, w)| ValueEntry::Uniform(UniformRange { uniform: [lo, lo + w] })),
        ]
    }

    proptest! {
        #[test]
        fn parse_serialize_parse_is_identity(
            gamma in 0.01f64..10.0, mu2 in 1e-4f64..1.0, f_bar in 0.1f64..20.0,
            alpha in 0.01f64..1.0, c0 in arb_value(), z0 in arb_value(),
            seed in 0u64..1_000_000, dt_exp in 2i32..5, record_every in 1u64..100,
        ) {
            let mut doc = ScenarioFile::parse(bundled("two_agent_oracle").unwrap()).unwrap();
            doc.algorithm.gamma = gamma;
            doc.algorithm.mu2 = mu2;
            doc.trigger.f_bar = PerAgent::Each(vec![f_bar, f_bar * 2.0]);
            doc.trigger.alpha = PerAgent::All(alpha);
            doc.gains.c0 = c0;
            doc.sim.z0 = InitEntry::One(z0);
            doc.sim.seed = seed;
            doc.sim.dt = 10f64.powi(-dt_exp);
            doc.sim.record_every = record_every;
            let reparsed = ScenarioFile::parse(&doc.to_toml()).unwrap();
            prop_assert_eq!(&reparsed, &doc);
            prop_assert_eq!(reparsed.to_scenario(), doc.to_scenario());
        }
    }
}
