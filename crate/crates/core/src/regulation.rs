//! Goal shielding and its fatigue.
//!
//! A single global shield strength suppresses competitors of whatever is being
//! pursued. Sustained suppression depletes it, rest restores it, and a
//! temporary override can prop it up.

use serde::{Deserialize, Serialize};

use crate::params::EngineParams;

/// Distance below which sigma snaps onto a bound, so that accumulated
/// rounding never costs an extra step.
const SNAP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShieldFatigueState {
    pub sigma: f64,
    pub override_boost: f64,
    pub override_ticks_left: u32,
    /// Whether a competitor was suppressed on the last step.
    pub suppressing: bool,
}

impl ShieldFatigueState {
    /// Fully rested shield.
    pub fn new(params: &EngineParams) -> Self {
        Self {
            sigma: params.sigma_max,
            override_boost: 0.0,
            override_ticks_left: 0,
            suppressing: false,
        }
    }

    pub fn override_active(&self) -> bool {
        self.override_ticks_left > 0
    }
}

pub fn effective_sigma(state: &ShieldFatigueState, params: &EngineParams) -> f64 {
    if state.override_active() {
        (state.sigma + state.override_boost).min(params.sigma_max)
    } else {
        state.sigma
    }
}

/// One tick of depletion (`load > 0`) or recovery (`load == 0`).
pub fn fatigue_step(state: &ShieldFatigueState, load: f64, params: &EngineParams) -> ShieldFatigueState {
    let load = load.clamp(0.0, 1.0);
    let sigma = if load > 0.0 {
        let next = state.sigma - params.delta_dep * load;
        if next <= params.sigma_min + SNAP {
            params.sigma_min
        } else {
            next
        }
    } else {
        let next = state.sigma + params.delta_rec;
        if next >= params.sigma_max - SNAP {
            params.sigma_max
        } else {
            next
        }
    };
    let ticks = state.override_ticks_left.saturating_sub(1);
    ShieldFatigueState {
        sigma,
        override_boost: if ticks == 0 { 0.0 } else { state.override_boost },
        override_ticks_left: ticks,
        suppressing: load > 0.0,
    }
}

/// Temporarily boost the shield in response to a reward or an important goal.
pub fn grant_override(
    state: &ShieldFatigueState,
    reward_salience: f64,
    importance: f64,
    params: &EngineParams,
) -> ShieldFatigueState {
    let boost = (reward_salience.max(0.0) * importance * params.override_gain).min(params.override_cap);
    let mut next = state.clone();
    if boost > 0.0 && params.override_duration > 0 {
        next.override_boost = boost;
        next.override_ticks_left = params.override_duration;
    }
    next
}

/// Upper bound on consecutive ticks of pursuit before the shield collapses
/// under full load: `ceil((sigma_max - sigma_min) / delta_dep) + 1`.
pub fn forced_switch_bound(params: &EngineParams) -> u64 {
    let steps = (params.sigma_max - params.sigma_min) / params.delta_dep;
    (steps - SNAP).ceil().max(0.0) as u64 + 1
}
