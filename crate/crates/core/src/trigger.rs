//! Dynamic event-triggering: each agent integrates a triggering function that
//! decays at least at rate `delta` and broadcasts when it reaches zero.

use thiserror::Error;

use crate::consensus::{self, smoothed_disagreement, ConsensusError, GainTable};
use crate::topology::Adjacency;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TriggerError {
    #[error("{name} must be strictly positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("alpha must lie in (0, 1], got {0}")]
    AlphaRange(f64),
    #[error("beta must be at least 1, got {0}")]
    BetaRange(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerParams {
    pub f_bar: f64,
    pub delta: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl TriggerParams {
    pub fn new(f_bar: f64, delta: f64, alpha: f64, beta: f64) -> Result<Self, TriggerError> {
        let params = Self {
            f_bar,
            delta,
            alpha,
            beta,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), TriggerError> {
        for (name, value) in [("f_bar", self.f_bar), ("delta", self.delta)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(TriggerError::NonPositive { name, value });
            }
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(TriggerError::AlphaRange(self.alpha));
        }
        if !(self.beta >= 1.0 && self.beta.is_finite()) {
            return Err(TriggerError::BetaRange(self.beta));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerState {
    pub params: TriggerParams,
    /// Current value of the triggering function.
    pub f: f64,
    /// Kahan compensation carried by the running sum in `f`.
    pub carry: f64,
    /// Measurement error `x̂ - x`.
    pub e: f64,
    pub last_event_time: f64,
    pub event_count: u64,
}

/// Outcome of [`TriggerState::check_and_fire`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Firing {
    pub state: TriggerState,
    /// New broadcast value when an event fired.
    pub broadcast: Option<f64>,
}

impl TriggerState {
    /// State right after the initial event at `t = 0`.
    pub fn initial(params: TriggerParams) -> Self {
        Self {
            params,
            f: params.f_bar,
            carry: 0.0,
            e: 0.0,
            last_event_time: 0.0,
            event_count: 1,
        }
    }

    /// `f <- f + dt * (min(eta, 0) - delta)`, summed with compensation so that
    /// a constant decrement reaches zero after exactly `f_bar / (delta dt)` steps.
    pub fn step_trigger(&self, eta: f64, dt: f64) -> Self {
        let y = dt * (eta.min(0.0) - self.params.delta) - self.carry;
        let f = self.f + y;
        Self {
            f,
            carry: (f - self.f) - y,
            ..*self
        }
    }

    /// Fires when `f <= 0`: the broadcast becomes `x_current`, the error and
    /// the triggering function reset.
    pub fn check_and_fire(&self, x_current: f64, t: f64) -> Firing {
        if self.f > 0.0 {
            return Firing {
                state: *self,
                broadcast: None,
            };
        }
        Firing {
            state: Self {
                f: self.params.f_bar,
                carry: 0.0,
                e: 0.0,
                last_event_time: t,
                event_count: self.event_count + 1,
                ..*self
            },
            broadcast: Some(x_current),
        }
    }
}

pub fn measurement_error(x_hat: f64, x: f64) -> f64 {
    x_hat - x
}

/// Internal triggering variable
/// `eta_i = alpha sum_j a_ij |Δx̂|²/(|Δx̂|+mu) - beta sum_j a_ij c_ij |e_i|`.
#[allow(clippy::too_many_arguments)]
pub fn eta(
    agent: usize,
    x_hat: &[f64],
    gains: &GainTable,
    adjacency: &Adjacency,
    e_i: f64,
    alpha: f64,
    beta: f64,
    mu_t: f64,
) -> Result<f64, ConsensusError> {
    consensus::positive("mu(t)", mu_t)?;
    let mut benefit = 0.0;
    let mut cost = 0.0;
    for j in adjacency.neighbors(agent) {
        let c = gains.between(agent, j)?.c;
        benefit += smoothed_disagreement(x_hat[agent], x_hat[j], mu_t);
        cost += c * e_i.abs();
    }
    Ok(alpha * benefit - beta * cost)
}
