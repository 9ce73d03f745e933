use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::arbitration::{MeansId, SelectionReason};
use crate::goal_model::GoalId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionTag {
    Continue,
    Switch,
    Idle,
}

/// Per-root snapshot for one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootState {
    /// Perceived channel value, i.e. the root's reservoir.
    pub current: f64,
    pub discrepancy: f64,
    pub velocity: f64,
    pub valence: f64,
    pub arousal: f64,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub tick: u64,
    /// `None` when idle.
    pub selected_means: Option<MeansId>,
    pub selection: SelectionTag,
    pub reason: SelectionReason,
    pub pursued_root_need: Option<GoalId>,
    pub per_root: BTreeMap<GoalId, RootState>,
    pub sigma: f64,
    pub sigma_eff: f64,
    pub override_active: bool,
    pub override_boost: f64,
    pub switches: u32,
    pub forced_switch: bool,
    pub abandonments: Vec<GoalId>,
    pub resource: f64,
    /// Aggregate utility per means this tick.
    pub motivation: BTreeMap<MeansId, f64>,
}

/// One episode's record, one event per tick starting at 0.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Trace(pub Vec<TraceEvent>);

impl Trace {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.0
    }

    pub fn roots(&self) -> Vec<GoalId> {
        self.0
            .first()
            .map(|e| e.per_root.keys().cloned().collect())
            .unwrap_or_default()
    }

    /// Line-delimited JSON, one event per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for e in &self.0 {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> io::Result<Self> {
        let mut events = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            events.push(serde_json::from_str(&line)?);
        }
        Ok(Trace(events))
    }
}
