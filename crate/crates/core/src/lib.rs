//! Deterministic multi-goal self-regulation engine.
//!
//! A goal hierarchy is regulated by discrepancy-reducing feedback loops.
//! Candidate means are scored with a temporal-motivation utility, the current
//! pursuit is shielded against rivals by a fatiguing resource, and affect
//! derived from progress velocity feeds back into priority. A seeded world
//! simulation closes the loop and the harness records traces and metrics.

pub mod affect;
pub mod arbitration;
pub mod feedback_loop;
pub mod goal_model;
pub mod harness;
pub mod params;
pub mod regulation;
pub mod world;

pub use affect::{AffectSignal, ProgressCriteria};
pub use arbitration::{Means, MeansId, MotivationTable, Selection, SelectionKind, SelectionReason, Verdict};
pub use feedback_loop::{LoopState, Observation};
pub use goal_model::{GoalHierarchy, GoalId, GoalModelError, GoalNode, Polarity};
pub use harness::{
    compute_metrics, load_scenario, run_episode, run_episode_for, sweep, validate_scenario, Episode,
    HarnessError, Metrics, SweepRow, Trace, TraceEvent,
};
pub use params::EngineParams;
pub use regulation::ShieldFatigueState;
pub use world::{init_world, Scenario, World, WorldError, WorldEvent};
