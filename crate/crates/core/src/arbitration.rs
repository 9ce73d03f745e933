//! Turning loop states into a choice of action.
//!
//! Each `(means, goal)` pair gets a temporal-motivation utility, means sum
//! their utilities over every goal they serve, the table is pruned to a short
//! list and [`select`] applies the shielded switching rule.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feedback_loop::LoopState;
use crate::goal_model::{abandonment_threshold, GoalId, GoalNode, Polarity};
use crate::params::EngineParams;

pub type MeansId = String;

/// Expectancy assumed for a served goal with no recorded estimate.
pub const DEFAULT_EXPECTANCY: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum ArbitrationError {
    #[error("means `{means}` does not serve goal `{goal}`")]
    GoalNotServed { means: MeansId, goal: GoalId },
}

/// An executable action and the goals it advances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Means {
    pub id: MeansId,
    /// Fraction of a goal's discrepancy one success addresses, in (0, 1].
    pub serves: BTreeMap<GoalId, f64>,
    #[serde(default)]
    pub delay: f64,
    #[serde(default)]
    pub cost: f64,
    #[serde(default)]
    pub blocked: bool,
    /// Learned success probability per served goal.
    #[serde(default)]
    pub expectancy: BTreeMap<GoalId, f64>,
    /// Served goals this means sets back instead of advancing.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub losses: BTreeSet<GoalId>,
}

impl Means {
    pub fn expectancy_for(&self, goal: &str) -> f64 {
        self.expectancy.get(goal).copied().unwrap_or(DEFAULT_EXPECTANCY)
    }

    pub fn contribution(&self, goal: &str) -> Option<f64> {
        self.serves.get(goal).copied()
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let id = &self.id;
        if id.is_empty() {
            out.push("means with empty id".to_string());
        }
        if self.serves.is_empty() {
            out.push(format!("means `{id}` serves no goal"));
        }
        for (g, c) in &self.serves {
            if !(*c > 0.0 && *c <= 1.0) {
                out.push(format!("means `{id}`: contribution to `{g}` must be in (0, 1]"));
            }
        }
        for (g, e) in &self.expectancy {
            if !self.serves.contains_key(g) {
                out.push(format!("means `{id}`: expectancy for unserved goal `{g}`"));
            }
            if !(0.0..=1.0).contains(e) {
                out.push(format!("means `{id}`: expectancy for `{g}` must be in [0, 1]"));
            }
        }
        for g in &self.losses {
            if !self.serves.contains_key(g) {
                out.push(format!("means `{id}`: loss on unserved goal `{g}`"));
            }
        }
        if !(self.delay.is_finite() && self.delay >= 0.0) {
            out.push(format!("means `{id}`: delay must be >= 0"));
        }
        if !(self.cost.is_finite() && self.cost >= 0.0) {
            out.push(format!("means `{id}`: cost must be >= 0"));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Framing {
    Gain,
    Loss,
}

/// Whether acting on `means` is anticipated as a gain or a loss for `goal`.
///
/// Declared losses are always losses. For avoidance goals the means raises
/// the channel, which is a loss while the channel sits below the avoided
/// reference (the margin would shrink).
pub fn framing(goal: &GoalNode, loop_state: &LoopState, means: &Means) -> Framing {
    if means.losses.contains(&goal.id) {
        return Framing::Loss;
    }
    match goal.polarity {
        Polarity::Avoidance if loop_state.current < goal.reference => Framing::Loss,
        _ => Framing::Gain,
    }
}

fn normalized_discrepancy(goal: &GoalNode, loop_state: &LoopState) -> f64 {
    loop_state.discrepancy / goal.reference.abs().max(1.0)
}

/// Temporal-motivation utility of `means` for one served goal:
/// `E * V_eff * c * d_norm / (1 + gamma * D)`, negated and scaled by
/// `lambda_loss` when the outcome is framed as a loss.
pub fn tmt_utility(
    goal: &GoalNode,
    loop_state: &LoopState,
    means: &Means,
    affect_mult: f64,
    params: &EngineParams,
) -> Result<f64, ArbitrationError> {
    let c = means
        .contribution(&goal.id)
        .ok_or_else(|| ArbitrationError::GoalNotServed {
            means: means.id.clone(),
            goal: goal.id.clone(),
        })?;
    let value = goal.base_value * goal.importance * affect_mult;
    let magnitude = means.expectancy_for(&goal.id) * value * c * normalized_discrepancy(goal, loop_state)
        / (1.0 + params.gamma * means.delay);
    Ok(match framing(goal, loop_state, means) {
        Framing::Gain => magnitude,
        Framing::Loss => -params.lambda_loss * magnitude,
    })
}

/// Discrepancy-independent expected payoff of a means for a goal; what the
/// abandonment check weighs.
pub fn prospect(goal: &GoalNode, means: &Means, params: &EngineParams) -> f64 {
    let c = means.contribution(&goal.id).unwrap_or(0.0);
    means.expectancy_for(&goal.id) * goal.base_value * goal.importance * c
        / (1.0 + params.gamma * means.delay)
}

/// Everything arbitration needs to know about one active goal.
#[derive(Debug, Clone, Copy)]
pub struct GoalView<'a> {
    pub node: &'a GoalNode,
    pub loop_state: &'a LoopState,
    pub affect_mult: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotivationRow {
    pub means_id: MeansId,
    pub per_goal: BTreeMap<GoalId, f64>,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotivationTable {
    pub tick: u64,
    /// Rows in ascending means id order.
    pub rows: Vec<MotivationRow>,
}

impl MotivationTable {
    pub fn total(&self, means_id: &str) -> f64 {
        self.rows
            .iter()
            .find(|r| r.means_id == means_id)
            .map_or(0.0, |r| r.total)
    }

    pub fn totals(&self) -> BTreeMap<MeansId, f64> {
        self.rows.iter().map(|r| (r.means_id.clone(), r.total)).collect()
    }
}

/// Sum of per-goal utilities over the served goals in `scope`.
/// Goals outside the scope (inactive) contribute nothing; blocked means get 0.
pub fn aggregate(
    means: &Means,
    scope: &BTreeMap<GoalId, GoalView<'_>>,
    params: &EngineParams,
) -> MotivationRow {
    let mut per_goal = BTreeMap::new();
    if !means.blocked {
        for goal_id in means.serves.keys() {
            if let Some(view) = scope.get(goal_id) {
                let u = tmt_utility(view.node, view.loop_state, means, view.affect_mult, params)
                    .expect("goal taken from serves");
                per_goal.insert(goal_id.clone(), u);
            }
        }
    }
    let total = per_goal.values().fold(0.0, |acc, u| acc + u);
    MotivationRow {
        means_id: means.id.clone(),
        per_goal,
        total,
    }
}

pub fn build_table<'m>(
    tick: u64,
    means: impl IntoIterator<Item = &'m Means>,
    scope: &BTreeMap<GoalId, GoalView<'_>>,
    params: &EngineParams,
) -> MotivationTable {
    let mut rows: Vec<MotivationRow> = means.into_iter().map(|m| aggregate(m, scope, params)).collect();
    rows.sort_by(|a, b| a.means_id.cmp(&b.means_id));
    MotivationTable { tick, rows }
}

/// Descending by utility, ascending id on ties.
fn rank(a: &(MeansId, f64), b: &(MeansId, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// The `k` highest-utility means with positive utility.
pub fn prune(table: &MotivationTable, k: usize) -> Vec<(MeansId, f64)> {
    let mut ranked: Vec<(MeansId, f64)> = table
        .rows
        .iter()
        .filter(|r| r.total > 0.0)
        .map(|r| (r.means_id.clone(), r.total))
        .collect();
    ranked.sort_by(rank);
    ranked.truncate(k);
    ranked
}

/// A short-listed means as seen by [`select`].
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub id: MeansId,
    pub utility: f64,
    pub cost: f64,
    pub blocked: bool,
}

pub fn candidates<'m>(
    shortlist: &[(MeansId, f64)],
    means: impl IntoIterator<Item = &'m Means>,
) -> Vec<Candidate> {
    let by_id: BTreeMap<&str, &Means> = means.into_iter().map(|m| (m.id.as_str(), m)).collect();
    shortlist
        .iter()
        .filter_map(|(id, u)| {
            by_id.get(id.as_str()).map(|m| Candidate {
                id: id.clone(),
                utility: *u,
                cost: m.cost,
                blocked: m.blocked,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "means", rename_all = "snake_case")]
pub enum SelectionKind {
    Continue(MeansId),
    Switch(MeansId),
    Idle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionReason {
    /// Kept pursuing; every competitor's shielded utility stayed at or below
    /// the current utility.
    ShieldedInferior,
    /// Kept pursuing; a competitor beat the current utility but not the
    /// hysteresis margin.
    Hysteresis,
    /// Voluntary switch; a competitor cleared the margin despite the shield.
    Outbid,
    /// Nothing viable was being pursued, so the best candidate was taken.
    Engage,
    /// The shield collapsed; the best other candidate was taken.
    ForcedSwitch,
    NoViableMeans,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub kind: SelectionKind,
    pub reason: SelectionReason,
    /// Competitors held back by the shield this tick.
    pub suppressed: usize,
    /// Feasible candidates other than the one selected.
    pub competitors: usize,
}

impl Selection {
    pub fn means(&self) -> Option<&str> {
        match &self.kind {
            SelectionKind::Continue(m) | SelectionKind::Switch(m) => Some(m),
            SelectionKind::Idle => None,
        }
    }

    pub fn is_switch(&self) -> bool {
        matches!(self.kind, SelectionKind::Switch(_))
    }

    /// Fraction of competitors suppressed, in [0, 1].
    pub fn suppression_load(&self) -> f64 {
        if self.competitors == 0 {
            0.0
        } else {
            (self.suppressed as f64 / self.competitors as f64).min(1.0)
        }
    }
}

fn best<'c>(items: impl Iterator<Item = (&'c Candidate, f64)>) -> Option<(&'c Candidate, f64)> {
    items.fold(None, |acc, (c, score)| match acc {
        Some((b, s)) if s > score || (s == score && b.id <= c.id) => Some((b, s)),
        _ => Some((c, score)),
    })
}

/// Fatigue-aware action selection.
///
/// Competitors of the pursued means have their utility shielded to
/// `U * (1 - sigma_eff)`; a voluntary switch needs the best shielded
/// competitor to exceed `U* + hysteresis`. At or below `sigma_crit` the
/// shield has collapsed and the best unshielded competitor is taken.
pub fn select(
    shortlist: &[Candidate],
    current: Option<&str>,
    sigma_eff: f64,
    resource: f64,
    params: &EngineParams,
) -> Selection {
    let feasible: Vec<&Candidate> = shortlist
        .iter()
        .filter(|c| !c.blocked && c.cost <= resource && c.utility > 0.0)
        .collect();
    let pursued = current.and_then(|id| feasible.iter().copied().find(|c| c.id == id));

    let Some(pursued) = pursued else {
        return match best(feasible.iter().map(|c| (*c, c.utility))) {
            None => Selection {
                kind: SelectionKind::Idle,
                reason: SelectionReason::NoViableMeans,
                suppressed: 0,
                competitors: 0,
            },
            Some((c, _)) => Selection {
                kind: SelectionKind::Switch(c.id.clone()),
                reason: SelectionReason::Engage,
                suppressed: 0,
                competitors: feasible.len() - 1,
            },
        };
    };

    let rivals: Vec<&Candidate> = feasible.iter().copied().filter(|c| c.id != pursued.id).collect();
    let keep = |reason, suppressed| Selection {
        kind: SelectionKind::Continue(pursued.id.clone()),
        reason,
        suppressed,
        competitors: rivals.len(),
    };

    if sigma_eff <= params.sigma_crit {
        if let Some((c, _)) = best(rivals.iter().map(|c| (*c, c.utility))) {
            return Selection {
                kind: SelectionKind::Switch(c.id.clone()),
                reason: SelectionReason::ForcedSwitch,
                suppressed: 0,
                competitors: rivals.len(),
            };
        }
    }

    let current_u = pursued.utility;
    let bar = current_u + params.hysteresis;
    match best(rivals.iter().map(|c| (*c, c.utility * (1.0 - sigma_eff)))) {
        None => keep(SelectionReason::ShieldedInferior, 0),
        Some((c, shielded)) if shielded > bar => Selection {
            kind: SelectionKind::Switch(c.id.clone()),
            reason: SelectionReason::Outbid,
            suppressed: 0,
            competitors: rivals.len(),
        },
        Some((_, shielded)) if shielded > current_u => keep(SelectionReason::Hysteresis, rivals.len()),
        Some(_) => keep(SelectionReason::ShieldedInferior, rivals.len()),
    }
}

/// Exponential moving average of success for one served goal.
pub fn update_expectancy(
    means: &Means,
    goal: &str,
    success: bool,
    params: &EngineParams,
) -> Result<Means, ArbitrationError> {
    if !means.serves.contains_key(goal) {
        return Err(ArbitrationError::GoalNotServed {
            means: means.id.clone(),
            goal: goal.to_string(),
        });
    }
    let alpha = params.ema_alpha;
    let hit = if success { 1.0 } else { 0.0 };
    let e = (1.0 - alpha) * means.expectancy_for(goal) + alpha * hit;
    let mut next = means.clone();
    next.expectancy.insert(goal.to_string(), e.clamp(0.0, 1.0));
    Ok(next)
}

/// Unblocked means serving `goal_id`, best first.
pub fn equifinal_alternatives<'m>(
    goal_id: &str,
    means: impl IntoIterator<Item = &'m Means>,
    table: &MotivationTable,
) -> Vec<(MeansId, f64)> {
    let mut out: Vec<(MeansId, f64)> = means
        .into_iter()
        .filter(|m| !m.blocked && m.serves.contains_key(goal_id))
        .map(|m| (m.id.clone(), table.total(&m.id)))
        .collect();
    out.sort_by(rank);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Keep,
    Abandon,
}

/// Abandon when no alternative is left or the best one scores below the
/// goal's level-dependent threshold.
pub fn abandonment_check(
    goal: &GoalNode,
    scores: impl IntoIterator<Item = f64>,
    params: &EngineParams,
) -> Verdict {
    let best = scores
        .into_iter()
        .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.max(s))));
    match best {
        Some(b) if b >= abandonment_threshold(goal, params) => Verdict::Keep,
        _ => Verdict::Abandon,
    }
}
