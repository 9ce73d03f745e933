use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::trace::{SelectionTag, Trace};
use super::HarnessError;
use crate::goal_model::GoalId;

/// Stability measurements over one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ticks: u64,
    /// Largest share of attributed (non-idle) ticks held by one root need.
    pub monomania_index: f64,
    /// Shannon entropy of root-need time shares, normalized by `ln R`.
    pub allocation_entropy: f64,
    pub switch_count: u64,
    pub forced_switch_count: u64,
    pub need_floor: f64,
    pub mean_abs_valence: f64,
    pub abandonment_count: u64,
    pub idle_fraction: f64,
    /// Attributed ticks per root need.
    pub attribution: BTreeMap<GoalId, u64>,
}

pub fn compute_metrics(trace: &Trace) -> Result<Metrics, HarnessError> {
    let events = trace.events();
    if events.is_empty() {
        return Err(HarnessError::EmptyTrace);
    }
    let roots = trace.roots();
    let mut attribution: BTreeMap<GoalId, u64> = roots.iter().map(|r| (r.clone(), 0)).collect();
    let mut idle = 0u64;
    let mut switches = 0u64;
    let mut forced = 0u64;
    let mut abandonments = 0u64;
    let mut floor = f64::INFINITY;
    let mut valence_sum = 0.0;
    let mut valence_n = 0u64;

    for e in events {
        if e.selection == SelectionTag::Idle {
            idle += 1;
        }
        if let Some(r) = &e.pursued_root_need {
            *attribution.entry(r.clone()).or_default() += 1;
        }
        switches += u64::from(e.switches);
        forced += u64::from(e.forced_switch);
        abandonments += e.abandonments.len() as u64;
        for s in e.per_root.values() {
            floor = floor.min(s.current);
            valence_sum += s.valence.abs();
            valence_n += 1;
        }
    }

    let attributed: u64 = attribution.values().sum();
    let (monomania_index, allocation_entropy) = if attributed == 0 {
        (0.0, 0.0)
    } else {
        let total = attributed as f64;
        let max = *attribution.values().max().expect("nonempty") as f64 / total;
        let h: f64 = attribution
            .values()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / total;
                -p * p.ln()
            })
            .sum();
        let r = attribution.len();
        let norm = if r > 1 && h > 0.0 {
            h / (r as f64).ln()
        } else {
            0.0
        };
        (max, norm.clamp(0.0, 1.0))
    };

    Ok(Metrics {
        ticks: events.len() as u64,
        monomania_index,
        allocation_entropy,
        switch_count: switches,
        forced_switch_count: forced,
        need_floor: if floor.is_finite() { floor } else { 0.0 },
        mean_abs_valence: if valence_n == 0 {
            0.0
        } else {
            valence_sum / valence_n as f64
        },
        abandonment_count: abandonments,
        idle_fraction: idle as f64 / events.len() as f64,
        attribution,
    })
}

/// Longest run of consecutive ticks in which each root need received no
/// attribution. Every sliding window of `w` ticks contains an attribution to
/// a root exactly when its longest run is below `w`.
pub fn longest_unattributed_run(trace: &Trace) -> BTreeMap<GoalId, u64> {
    let mut run: BTreeMap<GoalId, u64> = trace.roots().into_iter().map(|r| (r, 0)).collect();
    let mut longest = run.clone();
    for e in trace.events() {
        for (root, r) in run.iter_mut() {
            if e.pursued_root_need.as_deref() == Some(root.as_str()) {
                *r = 0;
            } else {
                *r += 1;
                let l = longest.get_mut(root).expect("same keys");
                *l = (*l).max(*r);
            }
        }
    }
    longest
}

/// Lengths of every maximal run of consecutive ticks spent on the same means.
pub fn pursuit_runs(trace: &Trace) -> Vec<(String, u64)> {
    let mut out: Vec<(String, u64)> = Vec::new();
    let mut last: Option<&str> = None;
    for e in trace.events() {
        match (&e.selected_means, last) {
            (Some(m), Some(l)) if m == l => out.last_mut().expect("run open").1 += 1,
            (Some(m), _) => out.push((m.clone(), 1)),
            (None, _) => {}
        }
        last = e.selected_means.as_deref();
    }
    out
}
