//! Event-based dynamic average consensus estimator with composite adaptive
//! edge gains, each advanced by one explicit Euler step.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::topology::{Adjacency, Edge};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConsensusError {
    #[error("{name} must be strictly positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("no gain record for present edge {0}")]
    MissingGain(Edge),
    #[error("edge {edge}: initial gains must satisfy c0 >= c_hat0 >= 1, got c0={c0}, c_hat0={c_hat0}")]
    GainInit { edge: Edge, c0: f64, c_hat0: f64 },
}

/// Estimator constants: the leak rate `gamma` and the smoothing schedule
/// `mu(t) = mu1 * exp(-mu2 * t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlgorithmParams {
    gamma: f64,
    mu1: f64,
    mu2: f64,
}

impl AlgorithmParams {
    pub fn new(gamma: f64, mu1: f64, mu2: f64) -> Result<Self, ConsensusError> {
        positive("gamma", gamma)?;
        positive("mu1", mu1)?;
        positive("mu2", mu2)?;
        Ok(Self { gamma, mu1, mu2 })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn mu1(&self) -> f64 {
        self.mu1
    }

    pub fn mu2(&self) -> f64 {
        self.mu2
    }

    pub fn mu(&self, t: f64) -> f64 {
        self.mu1 * (-self.mu2 * t).exp()
    }
}

pub(crate) fn positive(name: &'static str, value: f64) -> Result<(), ConsensusError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(ConsensusError::NonPositive { name, value })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub id: usize,
    /// Internal state integrated by the estimator.
    pub z: f64,
    /// Estimate of the average, `z + r_i(t)`.
    pub x: f64,
    /// Value broadcast at the most recent event.
    pub x_hat: f64,
}

/// Adaptive gain shared by both endpoints of an undirected edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeGain {
    pub edge: Edge,
    pub c: f64,
    pub c_hat: f64,
    pub sigma: f64,
    pub nu: f64,
}

/// One gain record per undirected edge, iterated in edge order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GainTable {
    gains: BTreeMap<Edge, EdgeGain>,
}

impl GainTable {
    pub fn new(gains: impl IntoIterator<Item = EdgeGain>) -> Self {
        Self {
            gains: gains.into_iter().map(|g| (g.edge, g)).collect(),
        }
    }

    pub fn get(&self, edge: &Edge) -> Option<&EdgeGain> {
        self.gains.get(edge)
    }

    pub fn between(&self, i: usize, j: usize) -> Result<&EdgeGain, ConsensusError> {
        let edge = Edge::new(i, j).expect("neighbors are distinct");
        self.gains.get(&edge).ok_or(ConsensusError::MissingGain(edge))
    }

    pub fn iter(&self) -> impl Iterator<Item = &EdgeGain> {
        self.gains.values()
    }

    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }
}

/// `|d|^2 / (|d| + mu)`, the smoothed disagreement magnitude driving the
/// gain law and the triggering variable.
pub fn smoothed_disagreement(x_hat_i: f64, x_hat_j: f64, mu_t: f64) -> f64 {
    let d = (x_hat_i - x_hat_j).abs();
    d * d / (d + mu_t)
}

/// `u_i = -sum_j a_ij c_ij (x̂_i - x̂_j) / (|x̂_i - x̂_j| + mu)`.
pub fn control_input(
    agent: usize,
    x_hat: &[f64],
    gains: &GainTable,
    adjacency: &Adjacency,
    mu_t: f64,
) -> Result<f64, ConsensusError> {
    positive("mu(t)", mu_t)?;
    let mut u = 0.0;
    for j in adjacency.neighbors(agent) {
        let c = gains.between(agent, j)?.c;
        let d = x_hat[agent] - x_hat[j];
        u -= c * d / (d.abs() + mu_t);
    }
    Ok(u)
}

/// Forward Euler on `z' = -gamma z + u`, followed by the output map
/// `x = z + r_i(t + dt)`. The broadcast value is untouched.
pub fn step_agent(state: &AgentState, r_next: f64, u: f64, gamma: f64, dt: f64) -> AgentState {
    let z = state.z + dt * (-gamma * state.z + u);
    AgentState {
        z,
        x: z + r_next,
        ..*state
    }
}

/// One Euler step of the composite law. Both updates read the pre-step
/// values of `c` and `c_hat`.
pub fn step_gain(gain: &EdgeGain, x_hat_i: f64, x_hat_j: f64, a_ij: u8, mu_t: f64, dt: f64) -> EdgeGain {
    let direct = f64::from(a_ij) * smoothed_disagreement(x_hat_i, x_hat_j, mu_t);
    let gap = gain.c - gain.c_hat;
    EdgeGain {
        c: gain.c + dt * (direct - gain.sigma * gap),
        c_hat: gain.c_hat + dt * gain.nu * gap,
        ..*gain
    }
}

pub fn validate_gain_init(edge: Edge, c0: f64, c_hat0: f64) -> Result<(), ConsensusError> {
    if c0 >= c_hat0 && c_hat0 >= 1.0 {
        Ok(())
    } else {
        Err(ConsensusError::GainInit { edge, c0, c_hat0 })
    }
}
