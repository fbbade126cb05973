//! Leaky integrate-and-fire dynamics with soft reset and a rectangular surrogate gradient.
//!
//! One step charges `H = (1 - 1/tau) * H_prev + I`, fires `S = [H >= theta]`
//! and soft-resets `H -= S * theta`. The threshold comparison is differentiated
//! with `1/a` inside `|H - theta| < a/2` and zero elsewhere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{Graph, SpikeFn, Var};
use crate::tensor::{check_same, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifParams {
    pub tau: f64,
    pub theta: f64,
    pub surrogate_width: f64,
}

impl Default for LifParams {
    fn default() -> Self {
        Self {
            tau: 2.0,
            theta: 1.0,
            surrogate_width: 1.0,
        }
    }
}

impl LifParams {
    pub fn new(tau: f64, theta: f64, surrogate_width: f64) -> Result<Self> {
        let p = Self {
            tau,
            theta,
            surrogate_width,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 1.0) {
            return Err(Error::InvalidParam(format!("tau must exceed 1, got {}", self.tau)));
        }
        if !(self.theta > 0.0) {
            return Err(Error::InvalidParam(format!("theta must be positive, got {}", self.theta)));
        }
        if !(self.surrogate_width > 0.0) {
            return Err(Error::InvalidParam(format!(
                "surrogate width must be positive, got {}",
                self.surrogate_width
            )));
        }
        Ok(())
    }

    /// Multiplicative leak `1 - 1/tau` applied to the carried potential.
    pub fn leak(&self) -> f64 {
        1.0 - 1.0 / self.tau
    }
}

/// Membrane potential carried between timesteps.
#[derive(Clone, Debug, PartialEq)]
pub struct MembraneState(pub Tensor);

impl MembraneState {
    pub fn zeros(shape: &[usize]) -> Self {
        Self(Tensor::zeros(shape))
    }
}

/// Result of one step: the emitted spikes, the pre-reset charge and the new state.
#[derive(Clone, Debug)]
pub struct LifStep {
    pub spikes: Tensor,
    pub charge: Tensor,
    pub state: MembraneState,
}

pub fn lif_step(prev: &MembraneState, input: &Tensor, p: &LifParams) -> Result<LifStep> {
    check_same("lif_step", &prev.0, input)?;
    let leak = p.leak();
    let charge = prev.0.zip_map(input, "lif_step", |h, i| leak * h + i)?;
    let spikes = charge.map(|h| if h >= p.theta { 1.0 } else { 0.0 });
    let state = charge.zip_map(&spikes, "lif_step", |h, s| h - s * p.theta)?;
    Ok(LifStep {
        spikes,
        charge,
        state: MembraneState(state),
    })
}

/// Derivative used in place of the threshold's: `1/a` inside the window, else 0.
pub fn surrogate_grad(charge: &Tensor, p: &LifParams) -> Tensor {
    let a = p.surrogate_width;
    charge.map(|h| if (h - p.theta).abs() < a / 2.0 { 1.0 / a } else { 0.0 })
}

#[derive(Clone, Debug)]
pub struct LifTrace {
    pub spikes: Vec<Tensor>,
    pub charges: Vec<Tensor>,
}

/// Runs `lif_step` over a sequence starting from a zero membrane.
pub fn lif_sequence(inputs: &[Tensor], p: &LifParams) -> Result<LifTrace> {
    let first = inputs.first().ok_or(Error::TooFewTimesteps {
        what: "lif_sequence",
        needed: 1,
        got: 0,
    })?;
    let mut state = MembraneState::zeros(first.shape());
    let mut trace = LifTrace {
        spikes: Vec::with_capacity(inputs.len()),
        charges: Vec::with_capacity(inputs.len()),
    };
    for input in inputs {
        let step = lif_step(&state, input, p)?;
        trace.spikes.push(step.spikes);
        trace.charges.push(step.charge);
        state = step.state;
    }
    Ok(trace)
}

/// Differentiable LIF step on a graph. `prev = None` means a zero membrane.
///
/// With `detach_reset` the reset subtraction uses a detached copy of the spikes,
/// truncating the gradient path through the reset.
pub fn lif_step_graph(
    g: &mut Graph,
    prev: Option<Var>,
    input: Var,
    p: &LifParams,
    rule: SpikeFn,
    detach_reset: bool,
) -> Result<(Var, Var)> {
    let charge = match prev {
        Some(h) => {
            let leaked = g.scale(h, p.leak());
            g.add(leaked, input)?
        }
        None => input,
    };
    let spikes = g.spike(charge, p.theta, p.surrogate_width, rule);
    let reset_src = if detach_reset { g.detach(spikes) } else { spikes };
    let reset = g.scale(reset_src, p.theta);
    let state = g.sub(charge, reset)?;
    Ok((spikes, state))
}
