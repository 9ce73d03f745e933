//! Per-goal comparator: perceive, compare against the reference, track the
//! rate at which the discrepancy shrinks.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::goal_model::{GoalId, GoalNode, Polarity};

#[derive(Debug, Error, PartialEq)]
pub enum LoopError {
    #[error("unobservable goal `{0}`")]
    Unobservable(GoalId),
    #[error("tick {tick} does not follow last recorded tick {last}")]
    NonMonotonicTick { tick: u64, last: u64 },
}

/// One scalar channel per goal id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Observation(pub BTreeMap<GoalId, f64>);

impl Observation {
    pub fn get(&self, id: &str) -> Option<f64> {
        self.0.get(id).copied()
    }
}

impl FromIterator<(GoalId, f64)> for Observation {
    fn from_iter<I: IntoIterator<Item = (GoalId, f64)>>(iter: I) -> Self {
        Observation(iter.into_iter().collect())
    }
}

pub fn perceive(observation: &Observation, goal: &GoalNode) -> Result<f64, LoopError> {
    observation
        .get(&goal.id)
        .ok_or_else(|| LoopError::Unobservable(goal.id.clone()))
}

/// Nonnegative mismatch between `current` and the goal's reference.
///
/// Approach goals measure the shortfall below the reference; overshoot is 0.
/// Avoidance goals measure how far inside the safety margin `current` sits.
pub fn compare(current: f64, goal: &GoalNode) -> f64 {
    let d = match goal.polarity {
        Polarity::Approach => goal.reference - current,
        Polarity::Avoidance => goal.avoidance_margin - (current - goal.reference).abs(),
    };
    // max() also maps NaN to 0.
    d.max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopState {
    pub goal_id: GoalId,
    pub current: f64,
    pub discrepancy: f64,
    /// Discrepancy reduction per tick over the window; positive is progress.
    pub velocity: f64,
    pub history: VecDeque<(u64, f64)>,
    pub window: usize,
}

impl LoopState {
    pub fn new(goal_id: impl Into<GoalId>, window: usize) -> Self {
        Self {
            goal_id: goal_id.into(),
            current: 0.0,
            discrepancy: 0.0,
            velocity: 0.0,
            history: VecDeque::with_capacity(window),
            window: window.max(1),
        }
    }

    pub fn last_tick(&self) -> Option<u64> {
        self.history.back().map(|&(t, _)| t)
    }

    /// Discrepancy at the previous sample, if any.
    pub fn previous_discrepancy(&self) -> Option<f64> {
        let n = self.history.len();
        (n >= 2).then(|| self.history[n - 2].1)
    }
}

fn window_velocity(history: &VecDeque<(u64, f64)>) -> f64 {
    match (history.front(), history.back()) {
        (Some(&(t0, d0)), Some(&(t1, d1))) if t1 > t0 => (d0 - d1) / (t1 - t0) as f64,
        _ => 0.0,
    }
}

/// Advance one goal's loop by a single observation.
pub fn update_loop(
    state: &LoopState,
    observation: &Observation,
    goal: &GoalNode,
    tick: u64,
) -> Result<LoopState, LoopError> {
    if let Some(last) = state.last_tick() {
        if tick <= last {
            return Err(LoopError::NonMonotonicTick { tick, last });
        }
    }
    let current = perceive(observation, goal)?;
    let discrepancy = compare(current, goal);
    let mut history = state.history.clone();
    history.push_back((tick, discrepancy));
    while history.len() > state.window {
        history.pop_front();
    }
    Ok(LoopState {
        goal_id: state.goal_id.clone(),
        current,
        discrepancy,
        velocity: window_velocity(&history),
        history,
        window: state.window,
    })
}
