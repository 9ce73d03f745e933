//! Hierarchical goal structure: root needs at level 0, sub-goals below them.
//!
//! A [`GoalHierarchy`] is validated once on construction and immutable after
//! that. Changing any node means building a new hierarchy.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::EngineParams;

pub type GoalId = String;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    /// Reduce the distance to the reference.
    Approach,
    /// Keep at least `avoidance_margin` away from the reference.
    Avoidance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalNode {
    pub id: GoalId,
    #[serde(default)]
    pub parent_id: Option<GoalId>,
    pub level: u32,
    pub polarity: Polarity,
    #[serde(default)]
    pub label: String,
    pub base_value: f64,
    pub importance: f64,
    pub reference: f64,
    #[serde(default)]
    pub avoidance_margin: f64,
    pub affect_decay: f64,
    /// Scale applied to the root reservoir when this node is observed.
    /// Ignored for roots.
    #[serde(default = "unit")]
    pub channel_factor: f64,
}

fn unit() -> f64 {
    1.0
}

impl GoalNode {
    pub fn is_root(&self) -> bool {
        self.parent_id.is_none()
    }
}

/// A violated hierarchy invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyId,
    DuplicateId(GoalId),
    Cycle(GoalId),
    OrphanParent { id: GoalId, parent: GoalId },
    FewerThanTwoRoots(usize),
    NonPositive { id: GoalId, field: &'static str },
    MissingAvoidanceMargin(GoalId),
    AffectDecayBelowOne(GoalId),
    LevelMismatch { id: GoalId, expected: u32, found: u32 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyId => write!(f, "goal with empty id"),
            Violation::DuplicateId(id) => write!(f, "duplicate goal id `{id}`"),
            Violation::Cycle(id) => write!(f, "cycle through goal `{id}`"),
            Violation::OrphanParent { id, parent } => {
                write!(f, "goal `{id}` references missing parent `{parent}`")
            }
            Violation::FewerThanTwoRoots(n) => write!(f, "fewer than 2 roots (found {n})"),
            Violation::NonPositive { id, field } => {
                write!(f, "goal `{id}`: {field} must be positive and finite")
            }
            Violation::MissingAvoidanceMargin(id) => {
                write!(f, "avoidance goal `{id}` needs avoidance_margin > 0")
            }
            Violation::AffectDecayBelowOne(id) => {
                write!(f, "goal `{id}`: affect_decay must be >= 1")
            }
            Violation::LevelMismatch { id, expected, found } => {
                write!(f, "goal `{id}` has level {found}, expected {expected}")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum GoalModelError {
    #[error("malformed goal document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid goal hierarchy: {}", join(.0))]
    Invalid(Vec<Violation>),
    #[error("unknown goal `{0}`")]
    UnknownGoal(GoalId),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// Check every structural invariant over a flat node list.
pub fn validate_nodes(nodes: &[GoalNode]) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut by_id: BTreeMap<&str, &GoalNode> = BTreeMap::new();
    for n in nodes {
        if n.id.is_empty() {
            out.push(Violation::EmptyId);
        }
        if by_id.insert(n.id.as_str(), n).is_some() {
            out.push(Violation::DuplicateId(n.id.clone()));
        }
    }

    for n in nodes {
        let positive = |x: f64| x.is_finite() && x > 0.0;
        for (field, value) in [
            ("base_value", n.base_value),
            ("importance", n.importance),
            ("affect_decay", n.affect_decay),
            ("channel_factor", n.channel_factor),
        ] {
            if !positive(value) {
                out.push(Violation::NonPositive {
                    id: n.id.clone(),
                    field,
                });
            }
        }
        // affect_decay is a divisor in a convex update and must not overshoot.
        if positive(n.affect_decay) && n.affect_decay < 1.0 {
            out.push(Violation::AffectDecayBelowOne(n.id.clone()));
        }
        if !n.reference.is_finite() {
            out.push(Violation::NonPositive {
                id: n.id.clone(),
                field: "reference",
            });
        }
        if n.polarity == Polarity::Avoidance && !(n.avoidance_margin.is_finite() && n.avoidance_margin > 0.0)
        {
            out.push(Violation::MissingAvoidanceMargin(n.id.clone()));
        }
    }

    let mut acyclic = BTreeSet::new();
    for n in nodes {
        let mut cursor = n;
        let mut steps = 0;
        let ok = loop {
            match &cursor.parent_id {
                None => break true,
                Some(p) => match by_id.get(p.as_str()) {
                    None => {
                        if cursor.id == n.id {
                            out.push(Violation::OrphanParent {
                                id: n.id.clone(),
                                parent: p.clone(),
                            });
                        }
                        break false;
                    }
                    Some(parent) => {
                        steps += 1;
                        if parent.id == n.id || steps > nodes.len() {
                            out.push(Violation::Cycle(n.id.clone()));
                            break false;
                        }
                        cursor = parent;
                    }
                },
            }
        };
        if ok {
            acyclic.insert(n.id.as_str());
        }
    }

    for n in nodes.iter().filter(|n| acyclic.contains(n.id.as_str())) {
        let expected = match &n.parent_id {
            None => 0,
            Some(p) => by_id[p.as_str()].level + 1,
        };
        if n.level != expected {
            out.push(Violation::LevelMismatch {
                id: n.id.clone(),
                expected,
                found: n.level,
            });
        }
    }

    let roots = nodes.iter().filter(|n| n.is_root()).count();
    if roots < 2 {
        out.push(Violation::FewerThanTwoRoots(roots));
    }
    out
}

/// A validated goal tree with at least two roots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<GoalNode>", into = "Vec<GoalNode>")]
pub struct GoalHierarchy {
    nodes: BTreeMap<GoalId, GoalNode>,
    roots: BTreeSet<GoalId>,
    children: BTreeMap<GoalId, Vec<GoalId>>,
}

impl TryFrom<Vec<GoalNode>> for GoalHierarchy {
    type Error = GoalModelError;

    fn try_from(nodes: Vec<GoalNode>) -> Result<Self, Self::Error> {
        GoalHierarchy::new(nodes)
    }
}

impl From<GoalHierarchy> for Vec<GoalNode> {
    fn from(h: GoalHierarchy) -> Self {
        h.nodes.into_values().collect()
    }
}

#[derive(Serialize, Deserialize)]
struct GoalsDocument<T> {
    goals: T,
}

impl GoalHierarchy {
    pub fn new(nodes: Vec<GoalNode>) -> Result<Self, GoalModelError> {
        let violations = validate_nodes(&nodes);
        if !violations.is_empty() {
            return Err(GoalModelError::Invalid(violations));
        }
        let mut children: BTreeMap<GoalId, Vec<GoalId>> = BTreeMap::new();
        let mut roots = BTreeSet::new();
        let mut map = BTreeMap::new();
        for n in nodes {
            match &n.parent_id {
                None => {
                    roots.insert(n.id.clone());
                }
                Some(p) => children.entry(p.clone()).or_default().push(n.id.clone()),
            }
            map.insert(n.id.clone(), n);
        }
        for c in children.values_mut() {
            c.sort();
        }
        Ok(Self {
            nodes: map,
            roots,
            children,
        })
    }

    pub fn get(&self, id: &str) -> Option<&GoalNode> {
        self.nodes.get(id)
    }

    pub fn node(&self, id: &str) -> Result<&GoalNode, GoalModelError> {
        self.get(id)
            .ok_or_else(|| GoalModelError::UnknownGoal(id.to_string()))
    }

    /// All nodes in ascending id order.
    pub fn nodes(&self) -> impl Iterator<Item = &GoalNode> {
        self.nodes.values()
    }

    pub fn roots(&self) -> &BTreeSet<GoalId> {
        &self.roots
    }

    pub fn children(&self, id: &str) -> &[GoalId] {
        self.children.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Ids from `id` up to its root, inclusive at both ends.
    pub fn lineage(&self, id: &str) -> Result<Vec<GoalId>, GoalModelError> {
        let mut node = self.node(id)?;
        let mut out = vec![node.id.clone()];
        while let Some(p) = &node.parent_id {
            node = &self.nodes[p];
            out.push(node.id.clone());
        }
        Ok(out)
    }

    pub fn root_of(&self, id: &str) -> Result<&GoalId, GoalModelError> {
        let mut node = self.node(id)?;
        while let Some(p) = &node.parent_id {
            node = &self.nodes[p];
        }
        Ok(&node.id)
    }

    /// Returns a copy with `f` applied to one node, revalidated.
    pub fn with_node<F>(&self, id: &str, f: F) -> Result<Self, GoalModelError>
    where
        F: FnOnce(&mut GoalNode),
    {
        self.node(id)?;
        let mut nodes: Vec<GoalNode> = self.nodes.values().cloned().collect();
        if let Some(n) = nodes.iter_mut().find(|n| n.id == id) {
            f(n);
        }
        Self::new(nodes)
    }

    /// Serialize as a document with a single `goals` key.
    pub fn to_document(&self) -> String {
        serde_json::to_string_pretty(&GoalsDocument { goals: self }).expect("hierarchy serializes")
    }
}

/// Parse the `goals` key of a scenario (or goals-only) document.
pub fn load_hierarchy(document: &str) -> Result<GoalHierarchy, GoalModelError> {
    let value: serde_json::Value = serde_json::from_str(document)?;
    let goals = value
        .get("goals")
        .cloned()
        .ok_or_else(|| <serde_json::Error as serde::de::Error>::missing_field("goals"))?;
    let nodes: Vec<GoalNode> = serde_json::from_value(goals)?;
    GoalHierarchy::new(nodes)
}

/// How strongly a goal at this level resists being dropped:
/// `theta0 * kappa^level`, largest at the roots.
pub fn drop_resistance(node: &GoalNode, params: &EngineParams) -> f64 {
    params.theta0 * params.kappa.powi(node.level as i32)
}

/// Best-alternative prospect below which a goal is abandoned.
///
/// Inversely proportional to drop resistance and equal to `theta0` at the
/// roots, so deeper goals are given up sooner.
pub fn abandonment_threshold(node: &GoalNode, params: &EngineParams) -> f64 {
    params.theta0 / params.kappa.powi(node.level as i32)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn node(id: &str, parent: Option<&str>, level: u32) -> GoalNode {
        GoalNode {
            id: id.into(),
            parent_id: parent.map(Into::into),
            level,
            polarity: Polarity::Approach,
            label: String::new(),
            base_value: 1.0,
            importance: 1.0,
            reference: 10.0,
            avoidance_margin: 0.0,
            affect_decay: 1.0 + level as f64,
            channel_factor: 1.0,
        }
    }

    pub fn two_trees() -> GoalHierarchy {
        GoalHierarchy::new(vec![
            node("a", None, 0),
            node("b", None, 0),
            node("a1", Some("a"), 1),
            node("b1", Some("b"), 1),
        ])
        .unwrap()
    }
}
