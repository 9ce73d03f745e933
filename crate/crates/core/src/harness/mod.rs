//! Episode driver: wires the per-tick pipeline, records traces, computes
//! stability metrics and runs seed sweeps.

mod metrics;
mod trace;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use metrics::{compute_metrics, longest_unattributed_run, pursuit_runs, Metrics};
pub use trace::{RootState, SelectionTag, Trace, TraceEvent};

use crate::affect::{
    affect_update, intrinsic_pulse, priority_mult, recalibrate, AffectSignal, ProgressCriteria,
};
use crate::arbitration::{
    abandonment_check, build_table, candidates, equifinal_alternatives, prospect, prune, select,
    update_expectancy, GoalView, Means, MeansId, SelectionKind, SelectionReason, Verdict,
};
use crate::feedback_loop::{update_loop, LoopState};
use crate::goal_model::{GoalHierarchy, GoalId};
use crate::params::EngineParams;
use crate::regulation::{effective_sigma, fatigue_step, grant_override, ShieldFatigueState};
use crate::world::{init_world, Scenario, World, WorldEvent};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("scenario does not parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("invariant violated at tick {tick}: {detail}")]
    Invariant { tick: u64, detail: String },
    #[error("empty trace")]
    EmptyTrace,
}

/// Parse and validate a scenario document, collecting every violation.
pub fn validate_scenario(document: &str) -> Result<Scenario, Vec<String>> {
    let scenario = Scenario::from_json(document).map_err(|e| vec![format!("parse error: {e}")])?;
    let v = scenario.violations();
    if v.is_empty() {
        Ok(scenario)
    } else {
        Err(v)
    }
}

pub fn load_scenario(document: &str) -> Result<Scenario, HarnessError> {
    let scenario = Scenario::from_json(document)?;
    let v = scenario.violations();
    if v.is_empty() {
        Ok(scenario)
    } else {
        Err(HarnessError::Invalid(v))
    }
}

/// Everything the agent owns across ticks.
#[derive(Debug, Clone)]
pub struct Agent {
    hierarchy: GoalHierarchy,
    params: EngineParams,
    /// Sorted by id.
    means: Vec<Means>,
    /// Goals with at least one means of their own; only these can be
    /// abandoned. Others are regulated through their sub-goals.
    directly_served: BTreeSet<GoalId>,
    loops: BTreeMap<GoalId, LoopState>,
    criteria: BTreeMap<GoalId, ProgressCriteria>,
    affects: BTreeMap<GoalId, AffectSignal>,
    shield: ShieldFatigueState,
    current: Option<MeansId>,
    ever_selected: BTreeSet<MeansId>,
    /// Abandoned goal -> first tick it is active again.
    inactive_until: BTreeMap<GoalId, u64>,
    importance_cut: Option<f64>,
}

impl Agent {
    pub fn new(scenario: &Scenario) -> Result<Self, HarnessError> {
        let hierarchy = scenario
            .hierarchy()
            .map_err(|e| HarnessError::Invalid(vec![e.to_string()]))?;
        let params = scenario.params.clone();
        let means = scenario.agent_means();
        let directly_served = means.iter().flat_map(|m| m.serves.keys().cloned()).collect();
        let ids: Vec<GoalId> = hierarchy.nodes().map(|n| n.id.clone()).collect();
        let importance_cut = params.override_importance_percentile.map(|p| {
            let mut imp: Vec<f64> = hierarchy.nodes().map(|n| n.importance).collect();
            imp.sort_by(f64::total_cmp);
            imp[((imp.len() - 1) as f64 * p).floor() as usize]
        });
        Ok(Self {
            loops: ids
                .iter()
                .map(|id| (id.clone(), LoopState::new(id.clone(), params.window)))
                .collect(),
            criteria: ids
                .iter()
                .map(|id| (id.clone(), ProgressCriteria::new(id.clone(), &params)))
                .collect(),
            affects: ids
                .iter()
                .map(|id| (id.clone(), AffectSignal::neutral(id.clone())))
                .collect(),
            shield: ShieldFatigueState::new(&params),
            hierarchy,
            params,
            means,
            directly_served,
            current: None,
            ever_selected: BTreeSet::new(),
            inactive_until: BTreeMap::new(),
            importance_cut,
        })
    }

    pub fn hierarchy(&self) -> &GoalHierarchy {
        &self.hierarchy
    }

    pub fn means(&self) -> &[Means] {
        &self.means
    }

    pub fn shield(&self) -> &ShieldFatigueState {
        &self.shield
    }

    pub fn params(&self) -> &EngineParams {
        &self.params
    }

    pub fn is_goal_active(&self, goal: &str) -> bool {
        self.is_active(goal)
    }

    fn means_mut(&mut self, id: &str) -> Option<&mut Means> {
        self.means.iter_mut().find(|m| m.id == id)
    }

    fn is_active(&self, goal: &str) -> bool {
        !self.inactive_until.contains_key(goal)
    }

    /// Root need of the highest-contribution goal a means serves; ties go to
    /// the lowest root id.
    fn attribute(&self, means_id: &str) -> Option<(GoalId, GoalId)> {
        let m = self.means.iter().find(|m| m.id == means_id)?;
        m.serves
            .iter()
            .filter_map(|(g, c)| {
                let root = self.hierarchy.root_of(g).ok()?;
                Some((*c, root.clone(), g.clone()))
            })
            .max_by(|a, b| {
                a.0.total_cmp(&b.0)
                    .then_with(|| b.1.cmp(&a.1))
                    .then_with(|| b.2.cmp(&a.2))
            })
            .map(|(_, root, goal)| (root, goal))
    }

    fn react(&mut self, event: &WorldEvent) -> Result<(), HarnessError> {
        match event {
            WorldEvent::Block { means } => {
                if let Some(m) = self.means_mut(means) {
                    m.blocked = true;
                }
            }
            WorldEvent::Unblock { means } => {
                if let Some(m) = self.means_mut(means) {
                    m.blocked = false;
                }
            }
            WorldEvent::Reward { salience } => {
                let importance = self
                    .current
                    .as_deref()
                    .and_then(|m| self.attribute(m))
                    .and_then(|(_, g)| self.hierarchy.get(&g).map(|n| n.importance))
                    .unwrap_or(1.0);
                self.shield = grant_override(&self.shield, *salience, importance, &self.params);
            }
            WorldEvent::SetValue { goal, value } => {
                let value = *value;
                self.hierarchy = self
                    .hierarchy
                    .with_node(goal, |n| n.base_value = value)
                    .map_err(|e| HarnessError::Invalid(vec![e.to_string()]))?;
            }
            WorldEvent::AddResource { .. } => {}
        }
        Ok(())
    }

    /// Run one tick of the pipeline against `world`, advancing the world at
    /// the end.
    fn step(&mut self, world: &mut World) -> Result<TraceEvent, HarnessError> {
        let tick = world.tick();
        let params = self.params.clone();
        let invariant = |detail: String| HarnessError::Invariant { tick, detail };

        // a goal coming back from cooldown gets one tick before it can be
        // dropped again
        let mut reactivated = BTreeSet::new();
        self.inactive_until.retain(|goal, until| {
            let keep = *until > tick;
            if !keep {
                reactivated.insert(goal.clone());
            }
            keep
        });

        // perceive and compare
        let observation = world.observe(&self.hierarchy);
        let mut progressed = BTreeSet::new();
        for node in self.hierarchy.nodes() {
            let prev = &self.loops[&node.id];
            let next = update_loop(prev, &observation, node, tick).map_err(|e| invariant(e.to_string()))?;
            if next.previous_discrepancy().is_some_and(|d| next.discrepancy < d) {
                progressed.insert(node.id.clone());
            }
            self.loops.insert(node.id.clone(), next);
        }

        // affect, with intrinsic pulses applied before decay
        let pulses = intrinsic_pulse(&progressed, &self.hierarchy, &params);
        for node in self.hierarchy.nodes() {
            let prev = self.affects[&node.id].nudged(pulses.get(&node.id).copied().unwrap_or(0.0));
            let next = affect_update(
                &self.loops[&node.id],
                &self.criteria[&node.id],
                node,
                &prev,
                tick,
                &params,
            );
            self.affects.insert(node.id.clone(), next);
        }

        // arbitration
        let scope: BTreeMap<GoalId, GoalView<'_>> = self
            .hierarchy
            .nodes()
            .filter(|n| self.is_active(&n.id))
            .map(|n| {
                (
                    n.id.clone(),
                    GoalView {
                        node: n,
                        loop_state: &self.loops[&n.id],
                        affect_mult: priority_mult(&self.affects[&n.id], &params),
                    },
                )
            })
            .collect();
        let table = build_table(tick, &self.means, &scope, &params);
        drop(scope);
        let shortlist = prune(&table, params.prune_k);
        let sigma_eff = effective_sigma(&self.shield, &params);
        let selection = select(
            &candidates(&shortlist, &self.means),
            self.current.as_deref(),
            sigma_eff,
            world.state.resource,
            &params,
        );

        // act and learn
        let chosen = selection.means().map(str::to_string);
        let mut attributed = None;
        if let Some(m) = &chosen {
            let outcome = world.apply_action(m).map_err(|e| invariant(e.to_string()))?;
            if self.ever_selected.insert(m.clone()) {
                for goal in outcome.results.keys() {
                    let c = self.criteria[goal].mark_novel(&params);
                    self.criteria.insert(goal.clone(), c);
                }
            }
            let idx = self
                .means
                .iter()
                .position(|x| &x.id == m)
                .expect("selected from own means");
            for (goal, success) in &outcome.results {
                self.means[idx] = update_expectancy(&self.means[idx], goal, *success, &params)
                    .map_err(|e| invariant(e.to_string()))?;
            }
            attributed = self.attribute(m);
            if selection.is_switch() {
                if let (Some(cut), Some((_, goal))) = (self.importance_cut, &attributed) {
                    let importance = self.hierarchy.get(goal).map_or(0.0, |n| n.importance);
                    if importance >= cut {
                        self.shield = grant_override(&self.shield, 1.0, importance, &params);
                    }
                }
            }
        }
        self.current = chosen.clone();

        // abandonment: goals whose every remaining path looks hopeless
        let mut abandoned = Vec::new();
        for node in self.hierarchy.nodes() {
            if !self.directly_served.contains(&node.id)
                || !self.is_active(&node.id)
                || reactivated.contains(&node.id)
            {
                continue;
            }
            let alternatives = equifinal_alternatives(&node.id, &self.means, &table);
            let scores = alternatives.iter().map(|(id, _)| {
                let m = self
                    .means
                    .iter()
                    .find(|m| &m.id == id)
                    .expect("alternative exists");
                prospect(node, m, &params)
            });
            if abandonment_check(node, scores, &params) == Verdict::Abandon {
                abandoned.push(node.id.clone());
            }
        }
        for goal in &abandoned {
            self.inactive_until
                .insert(goal.clone(), tick + params.cooldown.max(1));
        }

        self.shield = fatigue_step(&self.shield, selection.suppression_load(), &params);

        for node in self.hierarchy.nodes() {
            let c = recalibrate(&self.criteria[&node.id], self.loops[&node.id].velocity, &params);
            self.criteria.insert(node.id.clone(), c);
        }

        let per_root: BTreeMap<GoalId, RootState> = self
            .hierarchy
            .roots()
            .iter()
            .map(|r| {
                let l = &self.loops[r];
                let a = &self.affects[r];
                (
                    r.clone(),
                    RootState {
                        current: l.current,
                        discrepancy: l.discrepancy,
                        velocity: l.velocity,
                        valence: a.valence,
                        arousal: a.arousal,
                        active: self.is_active(r),
                    },
                )
            })
            .collect();
        self.check_invariants(world, &per_root).map_err(invariant)?;

        let switched = selection.is_switch();
        let event = TraceEvent {
            tick,
            selected_means: chosen,
            selection: match selection.kind {
                SelectionKind::Continue(_) => SelectionTag::Continue,
                SelectionKind::Switch(_) => SelectionTag::Switch,
                SelectionKind::Idle => SelectionTag::Idle,
            },
            reason: selection.reason,
            pursued_root_need: attributed.map(|(root, _)| root),
            per_root,
            sigma: self.shield.sigma,
            sigma_eff,
            override_active: self.shield.override_active(),
            override_boost: self.shield.override_boost,
            switches: u32::from(switched),
            forced_switch: selection.reason == SelectionReason::ForcedSwitch,
            abandonments: abandoned,
            resource: world.state.resource,
            motivation: table.totals(),
        };

        for fired in world.step() {
            self.react(&fired)?;
        }
        Ok(event)
    }

    fn check_invariants(&self, world: &World, roots: &BTreeMap<GoalId, RootState>) -> Result<(), String> {
        let p = &self.params;
        if !(p.sigma_min..=p.sigma_max).contains(&self.shield.sigma) {
            return Err(format!("sigma {} outside bounds", self.shield.sigma));
        }
        for (id, r) in roots {
            if !(0.0..=world.cap()).contains(&r.current) {
                return Err(format!("reservoir of `{id}` = {} outside [0, cap]", r.current));
            }
        }
        for (id, a) in &self.affects {
            if !(a.valence > -1.0 && a.valence < 1.0) {
                return Err(format!("valence of `{id}` = {} outside (-1, 1)", a.valence));
            }
        }
        for (id, l) in &self.loops {
            if l.discrepancy.is_nan() || l.discrepancy < 0.0 {
                return Err(format!(
                    "discrepancy of `{id}` = {} is not a nonnegative number",
                    l.discrepancy
                ));
            }
        }
        Ok(())
    }
}

/// A world and the agent living in it, advanced one tick at a time.
#[derive(Debug, Clone)]
pub struct Episode {
    agent: Agent,
    world: World,
}

impl Episode {
    /// Set up both sides and fire the events scripted for tick 0.
    pub fn new(scenario: &Scenario, seed: u64) -> Result<Self, HarnessError> {
        let world = init_world(scenario, seed).map_err(|e| match e {
            crate::world::WorldError::InvalidScenario(v) => HarnessError::Invalid(v),
            other => HarnessError::Invalid(vec![other.to_string()]),
        })?;
        let mut episode = Self {
            agent: Agent::new(scenario)?,
            world,
        };
        for fired in episode.world.fire_due_events() {
            episode.agent.react(&fired)?;
        }
        Ok(episode)
    }

    pub fn step(&mut self) -> Result<TraceEvent, HarnessError> {
        self.agent.step(&mut self.world)
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn world(&self) -> &World {
        &self.world
    }
}

/// Run an episode for the scenario's horizon.
pub fn run_episode(scenario: &Scenario, seed: u64) -> Result<Trace, HarnessError> {
    run_episode_for(scenario, seed, scenario.horizon)
}

/// Run an episode for exactly `steps` ticks.
pub fn run_episode_for(scenario: &Scenario, seed: u64, steps: u64) -> Result<Trace, HarnessError> {
    let mut episode = Episode::new(scenario, seed)?;
    let mut events = Vec::with_capacity(steps as usize);
    for _ in 0..steps {
        events.push(episode.step()?);
    }
    Ok(Trace(events))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub seed: u64,
    pub metrics: Metrics,
}

/// One metrics row per seed, in the order given. Episodes run in parallel.
pub fn sweep(scenario: &Scenario, seeds: &[u64], steps: u64) -> Result<Vec<SweepRow>, HarnessError> {
    seeds
        .par_iter()
        .map(|&seed| {
            let trace = run_episode_for(scenario, seed, steps)?;
            Ok(SweepRow {
                seed,
                metrics: compute_metrics(&trace)?,
            })
        })
        .collect()
}

/// Arithmetic mean of a metric over sweep rows.
pub fn mean_of(rows: &[SweepRow], f: impl Fn(&Metrics) -> f64) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter().map(|r| f(&r.metrics)).sum::<f64>() / rows.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::fixtures::{means_spec, small};
    use crate::world::ScheduledEvent;

    #[test]
    fn attribution_prefers_largest_contribution_then_lowest_root() {
        let mut sc = small();
        let mut both = means_spec("both", "b", 1.0);
        both.means.serves = [("a".to_string(), 0.5), ("b".to_string(), 0.5)].into();
        both.p_true = [("a".to_string(), 1.0), ("b".to_string(), 1.0)].into();
        let mut lean_b = both.clone();
        lean_b.means.id = "lean_b".into();
        lean_b.means.serves.insert("b".into(), 0.9);
        sc.means.extend([both, lean_b]);
        let agent = Agent::new(&sc).unwrap();
        assert_eq!(agent.attribute("both").unwrap().0, "a");
        assert_eq!(agent.attribute("lean_b").unwrap().0, "b");
        assert_eq!(agent.attribute("ma").unwrap().0, "a");
        assert!(agent.attribute("nope").is_none());
    }

    #[test]
    fn reward_grants_override() {
        let mut sc = small();
        sc.events.push(ScheduledEvent {
            tick: 3,
            event: WorldEvent::Reward { salience: 1.0 },
        });
        let t = run_episode_for(&sc, 0, 6).unwrap();
        assert!(!t.events()[2].override_active);
        assert!(t.events()[3].override_active);
        assert!(t.events()[3].override_boost > 0.0);
    }

    #[test]
    fn block_and_set_value_reach_the_agent() {
        let mut sc = small();
        sc.events.extend([
            ScheduledEvent {
                tick: 0,
                event: WorldEvent::Block { means: "ma".into() },
            },
            ScheduledEvent {
                tick: 2,
                event: WorldEvent::SetValue {
                    goal: "b".into(),
                    value: 7.0,
                },
            },
        ]);
        let mut ep = Episode::new(&sc, 0).unwrap();
        assert!(ep.agent().means().iter().find(|m| m.id == "ma").unwrap().blocked);
        for _ in 0..3 {
            let e = ep.step().unwrap();
            assert_ne!(e.selected_means.as_deref(), Some("ma"));
        }
        assert_eq!(ep.agent().hierarchy().get("b").unwrap().base_value, 7.0);
    }

    #[test]
    fn hopeless_goal_is_dropped_and_reconsidered() {
        let mut sc = small();
        sc.means[0].means.expectancy = [("a".to_string(), 0.2)].into();
        sc.means[0].p_true = [("a".to_string(), 0.0)].into();
        sc.params.cooldown = 5;
        let t = run_episode_for(&sc, 0, 40).unwrap();
        let drops: Vec<u64> = t
            .events()
            .iter()
            .filter(|e| e.abandonments.iter().any(|g| g == "a"))
            .map(|e| e.tick)
            .collect();
        assert!(drops.len() >= 2, "{drops:?}");
        assert!(drops.windows(2).all(|w| w[1] - w[0] == 6), "{drops:?}");
        let first = drops[0] as usize;
        assert!(!t.events()[first].per_root["a"].active);
        assert!(t.events()[first + 5].per_root["a"].active);
    }

    #[test]
    fn invalid_scenario_is_rejected_before_running() {
        let mut sc = small();
        sc.means[0].p_true.insert("a".into(), 1.3);
        assert!(matches!(run_episode(&sc, 0), Err(HarnessError::Invalid(_))));
        assert!(validate_scenario(&sc.to_json()).is_err());
        assert!(load_scenario("[]").is_err());
    }
}
