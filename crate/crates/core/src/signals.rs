//! Per-agent reference signals and their uniform bounds.

use thiserror::Error;

/// Floor applied to both bounds; they must be strictly positive.
pub const BOUND_FLOOR: f64 = 1e-12;
/// Inflation applied to sampled suprema of piecewise-linear signals.
const SAMPLED_INFLATION: f64 = 1.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("signal evaluated at negative time {0}")]
    NegativeTime(f64),
    #[error("t={t} lies beyond the last knot at {last}")]
    BeyondLastKnot { t: f64, last: f64 },
    #[error("piecewise-linear knots must start at t=0 and strictly increase")]
    BadKnots,
    #[error("average over an empty agent set")]
    EmptySet,
    #[error("signal parameter is not finite")]
    NotFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Sin,
    Cos,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceSignal {
    /// `amplitude * sin(frequency * t)` or the cosine counterpart.
    Sinusoid {
        amplitude: f64,
        frequency: f64,
        phase: Phase,
    },
    Constant {
        value: f64,
    },
    /// Linear interpolation through `(t, value)` knots; the derivative at a
    /// knot is the slope of the segment to its right.
    PiecewiseLinear {
        knots: Vec<(f64, f64)>,
    },
}

impl ReferenceSignal {
    pub fn validate(&self) -> Result<(), SignalError> {
        match self {
            Self::Sinusoid {
                amplitude,
                frequency,
                ..
            } => {
                if !(amplitude.is_finite() && frequency.is_finite()) {
                    return Err(SignalError::NotFinite);
                }
            }
            Self::Constant { value } => {
                if !value.is_finite() {
                    return Err(SignalError::NotFinite);
                }
            }
            Self::PiecewiseLinear { knots } => {
                if knots.len() < 2 || knots[0].0 != 0.0 {
                    return Err(SignalError::BadKnots);
                }
                if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return Err(SignalError::BadKnots);
                }
                if knots.iter().any(|(t, v)| !(t.is_finite() && v.is_finite())) {
                    return Err(SignalError::NotFinite);
                }
            }
        }
        Ok(())
    }

    /// Last instant at which the signal is defined, if finite.
    pub fn end_time(&self) -> Option<f64> {
        match self {
            Self::PiecewiseLinear { knots } => knots.last().map(|k| k.0),
            _ => None,
        }
    }

    pub fn eval(&self, t: f64) -> Result<f64, SignalError> {
        if t < 0.0 {
            return Err(SignalError::NegativeTime(t));
        }
        Ok(match self {
            Self::Sinusoid {
                amplitude,
                frequency,
                phase: Phase::Sin,
            } => amplitude * (frequency * t).sin(),
            Self::Sinusoid {
                amplitude,
                frequency,
                phase: Phase::Cos,
            } => amplitude * (frequency * t).cos(),
            Self::Constant { value } => *value,
            Self::PiecewiseLinear { knots } => {
                let (k, slope) = segment(knots, t)?;
                knots[k].1 + slope * (t - knots[k].0)
            }
        })
    }

    pub fn eval_derivative(&self, t: f64) -> Result<f64, SignalError> {
        if t < 0.0 {
            return Err(SignalError::NegativeTime(t));
        }
        Ok(match self {
            Self::Sinusoid {
                amplitude,
                frequency,
                phase: Phase::Sin,
            } => amplitude * frequency * (frequency * t).cos(),
            Self::Sinusoid {
                amplitude,
                frequency,
                phase: Phase::Cos,
            } => -amplitude * frequency * (frequency * t).sin(),
            Self::Constant { .. } => 0.0,
            Self::PiecewiseLinear { knots } => segment(knots, t)?.1,
        })
    }
}

// Index of the segment containing t and its slope; the final knot uses the
// slope of the last segment.
fn segment(knots: &[(f64, f64)], t: f64) -> Result<(usize, f64), SignalError> {
    let last = knots[knots.len() - 1].0;
    if t > last {
        return Err(SignalError::BeyondLastKnot { t, last });
    }
    let k = match knots.iter().rposition(|&(tk, _)| tk <= t) {
        Some(k) if k + 1 < knots.len() => k,
        _ => knots.len() - 2,
    };
    let (t0, v0) = knots[k];
    let (t1, v1) = knots[k + 1];
    Ok((k, (v1 - v0) / (t1 - t0)))
}

/// Arithmetic mean of the signals of `agents` at time `t`.
pub fn group_average(
    signals: &[ReferenceSignal],
    agents: &[usize],
    t: f64,
) -> Result<f64, SignalError> {
    if agents.is_empty() {
        return Err(SignalError::EmptySet);
    }
    let mut sum = 0.0;
    for &i in agents {
        sum += signals[i].eval(t)?;
    }
    Ok(sum / agents.len() as f64)
}

/// Uniform bounds `sup |r_i| <= eps1` and `sup |r_i'| <= eps2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalBounds {
    pub eps1: f64,
    pub eps2: f64,
}

/// Analytic bounds for closed-form signals; piecewise-linear signals are
/// sampled at `dt` (knots included) and inflated by 5%.
pub fn bound_estimate(
    signals: &[ReferenceSignal],
    horizon: f64,
    dt: f64,
) -> Result<SignalBounds, SignalError> {
    let mut eps1: f64 = 0.0;
    let mut eps2: f64 = 0.0;
    for s in signals {
        s.validate()?;
        let (b1, b2) = match s {
            ReferenceSignal::Sinusoid {
                amplitude,
                frequency,
                ..
            } => (amplitude.abs(), (amplitude * frequency).abs()),
            ReferenceSignal::Constant { value } => (value.abs(), 0.0),
            ReferenceSignal::PiecewiseLinear { knots } => {
                let mut b1: f64 = 0.0;
                let mut b2: f64 = 0.0;
                let steps = (horizon / dt).ceil() as usize;
                let times = (0..=steps)
                    .map(|k| (k as f64 * dt).min(horizon))
                    .chain(knots.iter().map(|k| k.0).filter(|&t| t <= horizon));
                for t in times {
                    b1 = b1.max(s.eval(t)?.abs());
                    b2 = b2.max(s.eval_derivative(t)?.abs());
                }
                (b1 * SAMPLED_INFLATION, b2 * SAMPLED_INFLATION)
            }
        };
        eps1 = eps1.max(b1);
        eps2 = eps2.max(b2);
    }
    Ok(SignalBounds {
        eps1: eps1.max(BOUND_FLOOR),
        eps2: eps2.max(BOUND_FLOOR),
    })
}
