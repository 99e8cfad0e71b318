//! Execution state: which nodes are waiting, armed, or already fired.
//!
//! A running graph is described by four components:
//!
//! * **delayed** — nodes whose pre-activation delay is still counting
//!   down, each paired with the instant it elapses;
//! * **active** — nodes whose watchpoints are armed, each paired with the
//!   instant their timeout withdraws them (possibly never);
//! * **fired** — nodes that have triggered;
//! * **trace** — the chronological record of fired watchpoint nodes.
//!
//! Everything not in one of the first three sets is implicitly inactive.
//! A node is in *at most one* of delayed/active/fired at any instant the
//! engine hands control outside itself; [`ExecutionState::partition_ok`]
//! checks exactly that, and the engine's instrumentation re-checks it
//! after every mutating sub-step.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, NodeId};
use crate::time::Timestamp;
use crate::trace::Trace;

#[derive(Error, Debug, PartialEq, Eq)]
pub enum StateError {
    #[error("node {node} appears twice in the {set} set")]
    DuplicateTimedNode { set: &'static str, node: NodeId },
}

/// The full mutable state of one run. See the module docs for the role
/// of each component.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct ExecutionState {
    pub(crate) delayed: BTreeMap<NodeId, Timestamp>,
    pub(crate) active: BTreeMap<NodeId, Timestamp>,
    pub(crate) fired: BTreeSet<NodeId>,
    pub(crate) trace: Trace,
}

impl ExecutionState {
    /// The empty state: nothing waiting, nothing armed, nothing fired.
    pub fn new() -> Self {
        ExecutionState::default()
    }

    /// Assembles a state from explicit parts, e.g. when loading a
    /// snapshot. Fails if either timed list names a node twice; it does
    /// *not* reject a node that appears in more than one component, so a
    /// corrupt snapshot can still be diagnosed via [`Self::partition_ok`].
    pub fn from_parts(
        delayed: Vec<(NodeId, Timestamp)>,
        active: Vec<(NodeId, Timestamp)>,
        fired: Vec<NodeId>,
        trace: Trace,
    ) -> Result<Self, StateError> {
        let mut d = BTreeMap::new();
        for (n, t) in delayed {
            if d.insert(n.clone(), t).is_some() {
                return Err(StateError::DuplicateTimedNode { set: "delayed", node: n });
            }
        }
        let mut a = BTreeMap::new();
        for (n, t) in active {
            if a.insert(n.clone(), t).is_some() {
                return Err(StateError::DuplicateTimedNode { set: "active", node: n });
            }
        }
        Ok(ExecutionState {
            delayed: d,
            active: a,
            fired: fired.into_iter().collect(),
            trace,
        })
    }

    pub fn delayed(&self) -> &BTreeMap<NodeId, Timestamp> {
        &self.delayed
    }

    pub fn active(&self) -> &BTreeMap<NodeId, Timestamp> {
        &self.active
    }

    pub fn fired(&self) -> &BTreeSet<NodeId> {
        &self.fired
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    /// The delayed set with its timing information projected away.
    pub fn delayed_nodes(&self) -> BTreeSet<NodeId> {
        self.delayed.keys().cloned().collect()
    }

    /// The active set with its timing information projected away.
    pub fn active_nodes(&self) -> BTreeSet<NodeId> {
        self.active.keys().cloned().collect()
    }

    /// Nodes of `graph` in none of the three explicit sets.
    pub fn inactive_nodes(&self, graph: &Graph) -> BTreeSet<NodeId> {
        graph
            .node_ids()
            .filter(|n| {
                !self.delayed.contains_key(n)
                    && !self.active.contains_key(n)
                    && !self.fired.contains(n)
            })
            .cloned()
            .collect()
    }

    /// Returns every node to the inactive pool: removes `nodes` from
    /// delayed, active, and fired alike. The trace is history and is
    /// never rewritten. Nodes not present anywhere are ignored.
    pub fn reset_nodes(&mut self, nodes: &BTreeSet<NodeId>) {
        for n in nodes {
            self.delayed.remove(n);
            self.active.remove(n);
            self.fired.remove(n);
        }
    }

    /// True when delayed, active, and fired are pairwise disjoint.
    pub fn partition_ok(&self) -> bool {
        for n in self.delayed.keys() {
            if self.active.contains_key(n) || self.fired.contains(n) {
                return false;
            }
        }
        for n in self.active.keys() {
            if self.fired.contains(n) {
                return false;
            }
        }
        true
    }

    pub fn to_snapshot(&self) -> StateSnapshot {
        StateSnapshot {
            delayed: self.delayed.iter().map(|(n, t)| (n.clone(), *t)).collect(),
            active: self.active.iter().map(|(n, t)| (n.clone(), *t)).collect(),
            fired: self.fired.iter().cloned().collect(),
            trace: self.trace.clone(),
        }
    }

    pub fn from_snapshot(snap: StateSnapshot) -> Result<Self, StateError> {
        ExecutionState::from_parts(snap.delayed, snap.active, snap.fired, snap.trace)
    }
}

/// Serialization mirror of [`ExecutionState`]. Timed sets are stored as
/// ordered pairs so the on-disk form is stable and diff-friendly.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub delayed: Vec<(NodeId, Timestamp)>,
    pub active: Vec<(NodeId, Timestamp)>,
    pub fired: Vec<NodeId>,
    pub trace: Trace,
}
