//! Progress monitoring through affect.
//!
//! Velocity is judged against an adaptive expected rate. The gap becomes a
//! signed valence that feeds back into goal priority, while the expected rate
//! drifts toward what is observed so chronic conditions stop registering.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::feedback_loop::LoopState;
use crate::goal_model::{GoalHierarchy, GoalId, GoalNode};
use crate::params::EngineParams;

/// Valence is kept strictly inside (-1, 1).
pub const VALENCE_BOUND: f64 = 1.0 - 1e-9;

pub const PRIORITY_FLOOR: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressCriteria {
    pub goal_id: GoalId,
    /// Expected progress rate.
    pub v_ref: f64,
    /// Neutral band half-width; widened by novelty.
    pub deadzone: f64,
    pub novelty: f64,
}

impl ProgressCriteria {
    pub fn new(goal_id: impl Into<GoalId>, params: &EngineParams) -> Self {
        Self {
            goal_id: goal_id.into(),
            v_ref: 0.0,
            deadzone: params.deadzone,
            novelty: 0.0,
        }
    }

    fn with_novelty(mut self, novelty: f64, params: &EngineParams) -> Self {
        self.novelty = novelty.clamp(0.0, 1.0);
        self.deadzone = params.deadzone * (1.0 + params.novelty_widen * self.novelty);
        self
    }

    /// Novel situation: loosen the criterion fully.
    pub fn mark_novel(&self, params: &EngineParams) -> Self {
        self.clone().with_novelty(1.0, params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffectSignal {
    pub goal_id: GoalId,
    pub valence: f64,
    pub arousal: f64,
    pub tick: u64,
}

impl AffectSignal {
    pub fn neutral(goal_id: impl Into<GoalId>) -> Self {
        Self {
            goal_id: goal_id.into(),
            valence: 0.0,
            arousal: 0.0,
            tick: 0,
        }
    }

    /// Add an intrinsic increment, staying inside the valence bound.
    pub fn nudged(&self, increment: f64) -> Self {
        Self {
            valence: (self.valence + increment).clamp(-VALENCE_BOUND, VALENCE_BOUND),
            ..self.clone()
        }
    }
}

/// Target valence for a velocity error: 0 inside the deadzone, otherwise
/// `tanh(k_affect * error)`.
pub fn target_valence(error: f64, deadzone: f64, params: &EngineParams) -> f64 {
    if error.abs() <= deadzone {
        0.0
    } else {
        (params.k_affect * error)
            .tanh()
            .clamp(-VALENCE_BOUND, VALENCE_BOUND)
    }
}

/// Move valence a `1 / affect_decay` fraction of the way to the target.
/// Slow-decaying (higher-level) goals hold their affect longer.
pub fn affect_update(
    loop_state: &LoopState,
    crit: &ProgressCriteria,
    goal: &GoalNode,
    prev: &AffectSignal,
    tick: u64,
    params: &EngineParams,
) -> AffectSignal {
    let target = target_valence(loop_state.velocity - crit.v_ref, crit.deadzone, params);
    let valence = prev.valence + (target - prev.valence) / goal.affect_decay;
    AffectSignal {
        goal_id: goal.id.clone(),
        valence: valence.clamp(-VALENCE_BOUND, VALENCE_BOUND),
        arousal: target.abs(),
        tick,
    }
}

/// Drift the expected rate toward the observed one; let novelty fade.
pub fn recalibrate(
    crit: &ProgressCriteria,
    observed_velocity: f64,
    params: &EngineParams,
) -> ProgressCriteria {
    let v_ref = crit.v_ref + params.eta * (observed_velocity - crit.v_ref);
    ProgressCriteria {
        v_ref,
        ..crit.clone()
    }
    .with_novelty(crit.novelty * params.novelty_decay, params)
}

/// Small positive valence increments for goals that progressed this tick,
/// propagated up each lineage with per-level attenuation. Increments from
/// several descendants add up.
pub fn intrinsic_pulse(
    progressed: &BTreeSet<GoalId>,
    hierarchy: &GoalHierarchy,
    params: &EngineParams,
) -> BTreeMap<GoalId, f64> {
    let mut out: BTreeMap<GoalId, f64> = BTreeMap::new();
    for id in progressed {
        let Ok(lineage) = hierarchy.lineage(id) else {
            continue;
        };
        let mut amount = params.pulse;
        for ancestor in lineage {
            *out.entry(ancestor).or_default() += amount;
            amount *= params.pulse_attenuation;
        }
    }
    out
}

pub fn priority_mult(affect: &AffectSignal, params: &EngineParams) -> f64 {
    (1.0 + params.beta_priority * affect.valence).max(PRIORITY_FLOOR)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::goal_model::fixtures::node;
    use proptest::prelude::*;

    fn loop_at(velocity: f64) -> LoopState {
        let mut l = LoopState::new("g", 8);
        l.velocity = velocity;
        l
    }

    fn crit(v_ref: f64, deadzone: f64) -> ProgressCriteria {
        ProgressCriteria {
            goal_id: "g".into(),
            v_ref,
            deadzone,
            novelty: 0.0,
        }
    }

    #[test]
    fn on_target_decays_toward_zero() {
        let p = EngineParams::default();
        let g = node("g", None, 0);
        let prev = AffectSignal {
            valence: 0.6,
            ..AffectSignal::neutral("g")
        };
        let goal = GoalNode {
            affect_decay: 4.0,
            ..g
        };
        let next = affect_update(&loop_at(1.0), &crit(1.0, 0.1), &goal, &prev, 1, &p);
        assert!((next.valence - 0.45).abs() < 1e-12);
        assert_eq!(next.arousal, 0.0);
    }

    #[test]
    fn target_examples() {
        let p = EngineParams::default();
        assert!((target_valence(0.5, 0.1, &p) - 1.0f64.tanh()).abs() < 1e-12);
        assert!((target_valence(0.5, 0.1, &p) - 0.7616).abs() < 1e-4);
        assert_eq!(target_valence(0.05, 0.1, &p), 0.0);
        assert!(target_valence(1e6, 0.1, &p) < 1.0);
    }

    #[test]
    fn recalibrate_examples() {
        let p = EngineParams::default();
        let c = recalibrate(&crit(0.0, p.deadzone), 2.0, &p);
        assert!((c.v_ref - 0.1).abs() < 1e-12);
        let same = recalibrate(&crit(0.7, p.deadzone), 0.7, &p);
        assert_eq!(same.v_ref, 0.7);
    }

    #[test]
    fn novelty_widens_then_fades() {
        let p = EngineParams::default();
        let c = ProgressCriteria::new("g", &p).mark_novel(&p);
        assert_eq!(c.deadzone, p.deadzone * (1.0 + p.novelty_widen));
        let later = recalibrate(&c, 0.0, &p);
        assert!((later.novelty - p.novelty_decay).abs() < 1e-12);
        assert!(later.deadzone < c.deadzone && later.deadzone >= p.deadzone);
    }

    #[test]
    fn pulse_examples() {
        let p = EngineParams::default();
        let h = GoalHierarchy::new(vec![
            node("r", None, 0),
            node("s", None, 0),
            node("p", Some("r"), 1),
            node("l1", Some("p"), 2),
            node("l2", Some("p"), 2),
        ])
        .unwrap();
        assert!(intrinsic_pulse(&BTreeSet::new(), &h, &p).is_empty());

        let one: BTreeSet<GoalId> = ["l1".to_string()].into();
        let out = intrinsic_pulse(&one, &h, &p);
        assert!((out["l1"] - 0.02).abs() < 1e-12);
        assert!((out["p"] - 0.01).abs() < 1e-12);
        assert!((out["r"] - 0.005).abs() < 1e-12);

        let two: BTreeSet<GoalId> = ["l1".to_string(), "l2".to_string()].into();
        assert!((intrinsic_pulse(&two, &h, &p)["p"] - 0.02).abs() < 1e-12);
    }

    #[test]
    fn priority_examples() {
        let p = EngineParams::default();
        let a = |v| AffectSignal {
            valence: v,
            ..AffectSignal::neutral("g")
        };
        assert_eq!(priority_mult(&a(0.0), &p), 1.0);
        assert!((priority_mult(&a(0.5), &p) - 1.2).abs() < 1e-12);
        let steep = EngineParams {
            beta_priority: 2.0,
            ..p
        };
        assert_eq!(priority_mult(&a(-VALENCE_BOUND), &steep), PRIORITY_FLOOR);
    }

    /// Level-dependent decay: after the same impulse, deeper goals (smaller
    /// affect_decay) lose valence at least as fast.
    #[test]
    fn affect_half_life_grows_with_level() {
        let p = EngineParams::default();
        let half_life = |level: u32| {
            let g = GoalNode {
                affect_decay: 1.0 + 3.0 * level as f64,
                ..node("g", None, level)
            };
            let mut a = AffectSignal {
                valence: 0.8,
                ..AffectSignal::neutral("g")
            };
            let mut ticks = 0;
            while a.valence > 0.4 && ticks < 10_000 {
                a = affect_update(&loop_at(0.0), &crit(0.0, 0.1), &g, &a, ticks, &p);
                ticks += 1;
            }
            ticks
        };
        let h: Vec<u64> = (0..4).map(half_life).collect();
        assert!(h.windows(2).all(|w| w[0] <= w[1]), "{h:?}");
    }

    proptest! {
        #[test]
        fn target_sign_matches_error(err in -5.0f64..5.0, dz in 0.0f64..1.0) {
            let p = EngineParams::default();
            let t = target_valence(err, dz, &p);
            if err.abs() <= dz {
                prop_assert_eq!(t, 0.0);
            } else {
                prop_assert_eq!(t.signum(), err.signum());
            }
        }

        #[test]
        fn valence_stays_open_bounded(vs in prop::collection::vec(-100.0f64..100.0, 1..200),
                                      pulses in prop::collection::vec(0.0f64..0.5, 1..200),
                                      decay in 1.0f64..20.0) {
            let p = EngineParams::default();
            let g = GoalNode { affect_decay: decay, ..node("g", None, 0) };
            let mut a = AffectSignal::neutral("g");
            let mut c = ProgressCriteria::new("g", &p);
            for (i, v) in vs.iter().enumerate() {
                a = a.nudged(pulses[i % pulses.len()]);
                a = affect_update(&loop_at(*v), &c, &g, &a, i as u64, &p);
                c = recalibrate(&c, *v, &p);
                prop_assert!(a.valence > -1.0 && a.valence < 1.0);
                prop_assert!(a.arousal >= 0.0);
            }
        }

        #[test]
        fn priority_strictly_increasing_above_floor(a in -1.0f64..1.0, b in -1.0f64..1.0) {
            let p = EngineParams::default();
            let sig = |v| AffectSignal { valence: v, ..AffectSignal::neutral("g") };
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(lo < hi);
            if priority_mult(&sig(lo), &p) > PRIORITY_FLOOR {
                prop_assert!(priority_mult(&sig(hi), &p) > priority_mult(&sig(lo), &p));
            }
        }
    }
}
