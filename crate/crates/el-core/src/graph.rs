//! The attack-graph data model.
//!
//! A [`Graph`] is a finite directed graph of labeled nodes. Two node
//! families carry *watchpoints* — conditions over incoming alerts — and
//! are the only nodes that ever appear in a trace:
//!
//! * **Activation** nodes wait for their watchpoint and then enable their
//!   children. They carry the `entry`/`goal` markers and may be flagged as
//!   a loop's break node.
//! * **Guarded effect** nodes additionally hand a command to the
//!   environment when they fire.
//!
//! The remaining families are control plumbing: **logic** nodes join
//! branches under an and/or condition over their parents, **loop count**
//! nodes bound repetition of a subgraph, and **loop exit** nodes mark
//! where control resumes after a loop finishes.
//!
//! Construction enforces only *syntactic* well-formedness (ids unique and
//! non-empty, edges referencing known nodes, no self or duplicate edges,
//! atoms non-empty). The semantic rules — entry/goal presence, loop
//! shape, logic conditions mentioning only parents — live in
//! [`crate::validate`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::{DurationMs, Timeout};

/// Opaque node identifier.
///
/// Ordering is plain byte-wise string ordering. Everywhere the engine
/// walks a set of nodes it does so in ascending `NodeId` order, which is
/// what makes runs reproducible.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId::new(s)
    }
}

impl From<String> for NodeId {
    fn from(s: String) -> Self {
        NodeId(s)
    }
}

/// What a watchpoint waits for.
///
/// `Top` is permanently satisfied: the node fires in the first round
/// after it becomes active. `Atom` matches alerts whose atom string is
/// exactly equal — the engine never interprets the string's contents.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Watchpoint {
    Top,
    Atom(String),
}

impl Watchpoint {
    pub fn atom(name: impl Into<String>) -> Self {
        Watchpoint::Atom(name.into())
    }

    pub fn is_top(&self) -> bool {
        matches!(self, Watchpoint::Top)
    }

    /// Whether an alert carrying `atom` satisfies this watchpoint.
    /// `Top` matches no alert; it is satisfied without one.
    pub fn matches(&self, atom: &str) -> bool {
        match self {
            Watchpoint::Top => false,
            Watchpoint::Atom(a) => a == atom,
        }
    }
}

/// Command dispatched to the environment when a guarded effect node
/// fires. The engine treats the text as opaque; the empty string means
/// "no observable effect" and is never dispatched.
#[derive(Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EffectRef(String);

impl EffectRef {
    pub fn new(command: impl Into<String>) -> Self {
        EffectRef(command.into())
    }

    pub fn noop() -> Self {
        EffectRef(String::new())
    }

    pub fn command(&self) -> &str {
        &self.0
    }

    pub fn is_noop(&self) -> bool {
        self.0.is_empty()
    }
}

/// And/or condition attached to a logic node. Leaves name parent nodes;
/// a leaf is true once that parent has fired.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum BoolExpr {
    Node(NodeId),
    And(Vec<BoolExpr>),
    Or(Vec<BoolExpr>),
}

impl BoolExpr {
    pub fn node(id: impl Into<NodeId>) -> Self {
        BoolExpr::Node(id.into())
    }

    /// Every node id mentioned anywhere in the expression.
    pub fn leaves(&self) -> BTreeSet<NodeId> {
        let mut out = BTreeSet::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves(&self, out: &mut BTreeSet<NodeId>) {
        match self {
            BoolExpr::Node(n) => {
                out.insert(n.clone());
            }
            BoolExpr::And(items) | BoolExpr::Or(items) => {
                for item in items {
                    item.collect_leaves(out);
                }
            }
        }
    }

    /// True when the expression contains no leaves at all (an `and`/`or`
    /// of empty lists). Such conditions are rejected by validation.
    pub fn is_vacuous(&self) -> bool {
        self.leaves().is_empty()
    }

    /// Compact human-readable rendering, used by the DOT exporter and in
    /// validation messages: `(a && b) || c`.
    pub fn render(&self) -> String {
        match self {
            BoolExpr::Node(n) => n.to_string(),
            BoolExpr::And(items) => Self::render_list(items, " && "),
            BoolExpr::Or(items) => Self::render_list(items, " || "),
        }
    }

    fn render_list(items: &[BoolExpr], sep: &str) -> String {
        let parts: Vec<String> = items
            .iter()
            .map(|item| match item {
                BoolExpr::Node(n) => n.to_string(),
                nested => format!("({})", nested.render()),
            })
            .collect();
        parts.join(sep)
    }
}

/// Node families, useful for reporting and rendering.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Activation,
    GuardedEffect,
    Logic,
    LoopCount,
    LoopExit,
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            NodeKind::Activation => "activation",
            NodeKind::GuardedEffect => "guarded_effect",
            NodeKind::Logic => "logic",
            NodeKind::LoopCount => "loop_count",
            NodeKind::LoopExit => "loop_exit",
        };
        f.write_str(name)
    }
}

/// The label attached to a node: its family plus family-specific data.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum NodeLabel {
    Activation {
        watchpoint: Watchpoint,
        delay: DurationMs,
        timeout: Timeout,
        entry: bool,
        goal: bool,
        is_break: bool,
    },
    GuardedEffect {
        watchpoint: Watchpoint,
        effect: EffectRef,
        delay: DurationMs,
        timeout: Timeout,
    },
    Logic {
        condition: BoolExpr,
    },
    LoopCount {
        /// Remaining iterations granted to the loop body beyond the first
        /// pass; `-1` means the loop repeats until a break node fires.
        initial: i64,
    },
    LoopExit,
}

impl NodeLabel {
    /// A plain activation node: no delay, never times out, unmarked.
    pub fn activation(watchpoint: Watchpoint) -> Self {
        NodeLabel::Activation {
            watchpoint,
            delay: DurationMs::ZERO,
            timeout: Timeout::Infinite,
            entry: false,
            goal: false,
            is_break: false,
        }
    }

    /// A guarded effect node with default timing.
    pub fn guarded_effect(watchpoint: Watchpoint, effect: EffectRef) -> Self {
        NodeLabel::GuardedEffect {
            watchpoint,
            effect,
            delay: DurationMs::ZERO,
            timeout: Timeout::Infinite,
        }
    }

    pub fn logic(condition: BoolExpr) -> Self {
        NodeLabel::Logic { condition }
    }

    pub fn loop_count(initial: i64) -> Self {
        NodeLabel::LoopCount { initial }
    }

    pub fn loop_exit() -> Self {
        NodeLabel::LoopExit
    }

    // Builder-style helpers for the watchpoint families. Calling one on a
    // node family that has no such field is a programming error.

    pub fn with_delay(mut self, ms: u64) -> Self {
        match &mut self {
            NodeLabel::Activation { delay, .. } | NodeLabel::GuardedEffect { delay, .. } => {
                *delay = DurationMs::new(ms);
            }
            other => panic!("delay applies only to watchpoint nodes, not {}", other.kind()),
        }
        self
    }

    pub fn with_timeout(mut self, t: Timeout) -> Self {
        match &mut self {
            NodeLabel::Activation { timeout, .. } | NodeLabel::GuardedEffect { timeout, .. } => {
                *timeout = t;
            }
            other => panic!("timeout applies only to watchpoint nodes, not {}", other.kind()),
        }
        self
    }

    pub fn marked_entry(mut self) -> Self {
        match &mut self {
            NodeLabel::Activation { entry, .. } => *entry = true,
            other => panic!("only activation nodes can be entries, not {}", other.kind()),
        }
        self
    }

    pub fn marked_goal(mut self) -> Self {
        match &mut self {
            NodeLabel::Activation { goal, .. } => *goal = true,
            other => panic!("only activation nodes can be goals, not {}", other.kind()),
        }
        self
    }

    pub fn marked_break(mut self) -> Self {
        match &mut self {
            NodeLabel::Activation { is_break, .. } => *is_break = true,
            other => panic!("only activation nodes can be break nodes, not {}", other.kind()),
        }
        self
    }

    pub fn kind(&self) -> NodeKind {
        match self {
            NodeLabel::Activation { .. } => NodeKind::Activation,
            NodeLabel::GuardedEffect { .. } => NodeKind::GuardedEffect,
            NodeLabel::Logic { .. } => NodeKind::Logic,
            NodeLabel::LoopCount { .. } => NodeKind::LoopCount,
            NodeLabel::LoopExit => NodeKind::LoopExit,
        }
    }

    /// Activation and guarded effect nodes are "watchpoint nodes": they
    /// wait on telemetry and they are the only nodes recorded in traces.
    pub fn is_watchpoint_node(&self) -> bool {
        matches!(
            self,
            NodeLabel::Activation { .. } | NodeLabel::GuardedEffect { .. }
        )
    }

    pub fn watchpoint(&self) -> Option<&Watchpoint> {
        match self {
            NodeLabel::Activation { watchpoint, .. }
            | NodeLabel::GuardedEffect { watchpoint, .. } => Some(watchpoint),
            _ => None,
        }
    }

    /// Activation delay; zero for node families without one.
    pub fn delay(&self) -> DurationMs {
        match self {
            NodeLabel::Activation { delay, .. } | NodeLabel::GuardedEffect { delay, .. } => *delay,
            _ => DurationMs::ZERO,
        }
    }

    /// Active-set timeout; infinite for node families without one.
    pub fn timeout(&self) -> Timeout {
        match self {
            NodeLabel::Activation { timeout, .. } | NodeLabel::GuardedEffect { timeout, .. } => {
                *timeout
            }
            _ => Timeout::Infinite,
        }
    }

    pub fn effect(&self) -> Option<&EffectRef> {
        match self {
            NodeLabel::GuardedEffect { effect, .. } => Some(effect),
            _ => None,
        }
    }

    pub fn condition(&self) -> Option<&BoolExpr> {
        match self {
            NodeLabel::Logic { condition } => Some(condition),
            _ => None,
        }
    }

    pub fn loop_count_initial(&self) -> Option<i64> {
        match self {
            NodeLabel::LoopCount { initial } => Some(*initial),
            _ => None,
        }
    }

    pub fn is_entry(&self) -> bool {
        matches!(self, NodeLabel::Activation { entry: true, .. })
    }

    pub fn is_goal(&self) -> bool {
        matches!(self, NodeLabel::Activation { goal: true, .. })
    }

    pub fn is_break(&self) -> bool {
        matches!(self, NodeLabel::Activation { is_break: true, .. })
    }
}

/// Errors raised while assembling a [`Graph`] or resolving a node id.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("duplicate node id {0:?}")]
    DuplicateNode(NodeId),
    #[error("node ids must be non-empty")]
    EmptyNodeId,
    #[error("unknown node id {0:?}")]
    UnknownNode(NodeId),
    #[error("edge ({parent:?} -> {child:?}) references unknown node {missing:?}")]
    EdgeEndpointMissing {
        parent: NodeId,
        child: NodeId,
        missing: NodeId,
    },
    #[error("self-edge on {0:?}")]
    SelfEdge(NodeId),
    #[error("duplicate edge ({0:?} -> {1:?})")]
    DuplicateEdge(NodeId, NodeId),
    #[error("node {0:?} has an empty watchpoint atom")]
    EmptyAtom(NodeId),
}

/// A finite labeled directed graph. Nodes and adjacency are kept in
/// ordered maps so that iteration — and therefore everything built on
/// top of it — is deterministic.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Graph {
    nodes: BTreeMap<NodeId, NodeLabel>,
    children: BTreeMap<NodeId, BTreeSet<NodeId>>,
    parents: BTreeMap<NodeId, BTreeSet<NodeId>>,
}

impl Graph {
    /// Assembles a graph, checking syntactic well-formedness: unique
    /// non-empty ids, edges between known distinct nodes, no duplicate
    /// edges, non-empty watchpoint atoms.
    pub fn new(
        nodes: Vec<(NodeId, NodeLabel)>,
        edges: Vec<(NodeId, NodeId)>,
    ) -> Result<Self, GraphError> {
        let mut node_map = BTreeMap::new();
        for (id, label) in nodes {
            if id.as_str().is_empty() {
                return Err(GraphError::EmptyNodeId);
            }
            if let Some(Watchpoint::Atom(a)) = label.watchpoint() {
                if a.is_empty() {
                    return Err(GraphError::EmptyAtom(id));
                }
            }
            if node_map.insert(id.clone(), label).is_some() {
                return Err(GraphError::DuplicateNode(id));
            }
        }

        let mut children: BTreeMap<NodeId, BTreeSet<NodeId>> = node_map
            .keys()
            .map(|id| (id.clone(), BTreeSet::new()))
            .collect();
        let mut parents = children.clone();

        for (parent, child) in edges {
            for endpoint in [&parent, &child] {
                if !node_map.contains_key(endpoint) {
                    return Err(GraphError::EdgeEndpointMissing {
                        parent: parent.clone(),
                        child: child.clone(),
                        missing: (*endpoint).clone(),
                    });
                }
            }
            if parent == child {
                return Err(GraphError::SelfEdge(parent));
            }
            if !children.get_mut(&parent).unwrap().insert(child.clone()) {
                return Err(GraphError::DuplicateEdge(parent, child));
            }
            parents.get_mut(&child).unwrap().insert(parent);
        }

        Ok(Graph {
            nodes: node_map,
            children,
            parents,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.nodes.contains_key(id)
    }

    /// All node ids in ascending order.
    pub fn node_ids(&self) -> impl Iterator<Item = &NodeId> {
        self.nodes.keys()
    }

    /// All edges as (parent, child) pairs, ascending by parent then child.
    pub fn edges(&self) -> impl Iterator<Item = (&NodeId, &NodeId)> {
        self.children
            .iter()
            .flat_map(|(p, cs)| cs.iter().map(move |c| (p, c)))
    }

    pub fn edge_count(&self) -> usize {
        self.children.values().map(|cs| cs.len()).sum()
    }

    pub fn label(&self, id: &NodeId) -> Result<&NodeLabel, GraphError> {
        self.nodes
            .get(id)
            .ok_or_else(|| GraphError::UnknownNode(id.clone()))
    }

    /// Infallible label lookup for ids that came out of this graph.
    pub(crate) fn label_of(&self, id: &NodeId) -> &NodeLabel {
        self.nodes
            .get(id)
            .unwrap_or_else(|| panic!("node id {id:?} does not belong to this graph"))
    }

    pub(crate) fn children_of(&self, id: &NodeId) -> &BTreeSet<NodeId> {
        self.children
            .get(id)
            .unwrap_or_else(|| panic!("node id {id:?} does not belong to this graph"))
    }

    pub(crate) fn parents_of(&self, id: &NodeId) -> &BTreeSet<NodeId> {
        self.parents
            .get(id)
            .unwrap_or_else(|| panic!("node id {id:?} does not belong to this graph"))
    }

    // ------------------------------------------------------------------
    // Per-node accessors. Unknown ids are an error; node families without
    // the queried datum report the documented default (no watchpoint,
    // zero delay, infinite timeout, no-op effect).
    // ------------------------------------------------------------------

    pub fn watchpoint(&self, id: &NodeId) -> Result<Option<&Watchpoint>, GraphError> {
        Ok(self.label(id)?.watchpoint())
    }

    pub fn delay(&self, id: &NodeId) -> Result<DurationMs, GraphError> {
        Ok(self.label(id)?.delay())
    }

    pub fn timeout(&self, id: &NodeId) -> Result<Timeout, GraphError> {
        Ok(self.label(id)?.timeout())
    }

    pub fn condition(&self, id: &NodeId) -> Result<Option<&BoolExpr>, GraphError> {
        Ok(self.label(id)?.condition())
    }

    /// The command the node dispatches when it fires. Nodes without one
    /// report the no-op effect.
    pub fn effect(&self, id: &NodeId) -> Result<&EffectRef, GraphError> {
        static NOOP: EffectRef = EffectRef(String::new());
        Ok(self.label(id)?.effect().unwrap_or(&NOOP))
    }

    pub fn children(&self, id: &NodeId) -> Result<&BTreeSet<NodeId>, GraphError> {
        self.children
            .get(id)
            .ok_or_else(|| GraphError::UnknownNode(id.clone()))
    }

    pub fn parents(&self, id: &NodeId) -> Result<&BTreeSet<NodeId>, GraphError> {
        self.parents
            .get(id)
            .ok_or_else(|| GraphError::UnknownNode(id.clone()))
    }

    // ------------------------------------------------------------------
    // Node-class selections, each in ascending id order.
    // ------------------------------------------------------------------

    fn nodes_where(&self, pred: impl Fn(&NodeLabel) -> bool) -> BTreeSet<NodeId> {
        self.nodes
            .iter()
            .filter(|(_, label)| pred(label))
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn logic_nodes(&self) -> BTreeSet<NodeId> {
        self.nodes_where(|l| l.kind() == NodeKind::Logic)
    }

    pub fn loop_count_nodes(&self) -> BTreeSet<NodeId> {
        self.nodes_where(|l| l.kind() == NodeKind::LoopCount)
    }

    pub fn loop_exit_nodes(&self) -> BTreeSet<NodeId> {
        self.nodes_where(|l| l.kind() == NodeKind::LoopExit)
    }

    pub fn entry_nodes(&self) -> BTreeSet<NodeId> {
        self.nodes_where(NodeLabel::is_entry)
    }

    pub fn goal_nodes(&self) -> BTreeSet<NodeId> {
        self.nodes_where(NodeLabel::is_goal)
    }

    pub fn watchpoint_nodes(&self) -> BTreeSet<NodeId> {
        self.nodes_where(NodeLabel::is_watchpoint_node)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> NodeId {
        NodeId::new(s)
    }

    #[test]
    fn construction_rejects_syntactic_garbage() {
        let a = (id("a"), NodeLabel::activation(Watchpoint::Top));
        let b = (id("b"), NodeLabel::activation(Watchpoint::Top));

        let dup = Graph::new(vec![a.clone(), a.clone()], vec![]);
        assert_eq!(dup.unwrap_err(), GraphError::DuplicateNode(id("a")));

        let dangling = Graph::new(vec![a.clone()], vec![(id("a"), id("zz"))]);
        assert!(matches!(
            dangling.unwrap_err(),
            GraphError::EdgeEndpointMissing { .. }
        ));

        let self_edge = Graph::new(vec![a.clone()], vec![(id("a"), id("a"))]);
        assert_eq!(self_edge.unwrap_err(), GraphError::SelfEdge(id("a")));

        let dup_edge = Graph::new(
            vec![a.clone(), b.clone()],
            vec![(id("a"), id("b")), (id("a"), id("b"))],
        );
        assert_eq!(
            dup_edge.unwrap_err(),
            GraphError::DuplicateEdge(id("a"), id("b"))
        );

        let empty_atom = Graph::new(
            vec![(id("a"), NodeLabel::activation(Watchpoint::atom("")))],
            vec![],
        );
        assert_eq!(empty_atom.unwrap_err(), GraphError::EmptyAtom(id("a")));

        let empty_id = Graph::new(vec![(id(""), NodeLabel::loop_exit())], vec![]);
        assert_eq!(empty_id.unwrap_err(), GraphError::EmptyNodeId);
    }

    #[test]
    fn accessors_report_family_defaults() {
        let g = Graph::new(
            vec![
                (id("l"), NodeLabel::logic(BoolExpr::node("w"))),
                (
                    id("w"),
                    NodeLabel::activation(Watchpoint::atom("sig"))
                        .with_delay(25)
                        .with_timeout(Timeout::millis(500)),
                ),
                (id("x"), NodeLabel::loop_exit()),
            ],
            vec![(id("w"), id("l"))],
        )
        .unwrap();

        // Families without the queried datum report documented defaults.
        assert_eq!(g.watchpoint(&id("l")).unwrap(), None);
        assert_eq!(g.timeout(&id("l")).unwrap(), Timeout::Infinite);
        assert_eq!(g.delay(&id("x")).unwrap(), DurationMs::ZERO);
        assert!(g.effect(&id("x")).unwrap().is_noop());

        assert_eq!(g.delay(&id("w")).unwrap(), DurationMs::new(25));
        assert_eq!(g.timeout(&id("w")).unwrap(), Timeout::millis(500));
        assert_eq!(
            g.watchpoint(&id("w")).unwrap(),
            Some(&Watchpoint::atom("sig"))
        );

        assert_eq!(
            g.timeout(&id("nope")).unwrap_err(),
            GraphError::UnknownNode(id("nope"))
        );

        assert_eq!(g.children(&id("w")).unwrap().len(), 1);
        assert!(g.parents(&id("w")).unwrap().is_empty());
    }

    #[test]
    fn class_selections_are_ordered() {
        let g = Graph::new(
            vec![
                (id("z_goal"), NodeLabel::activation(Watchpoint::Top).marked_goal()),
                (id("a_entry"), NodeLabel::activation(Watchpoint::Top).marked_entry()),
                (id("m_count"), NodeLabel::loop_count(3)),
            ],
            vec![],
        )
        .unwrap();
        assert_eq!(
            g.entry_nodes().into_iter().collect::<Vec<_>>(),
            vec![id("a_entry")]
        );
        assert_eq!(g.goal_nodes().len(), 1);
        assert_eq!(g.loop_count_nodes().len(), 1);
        assert!(g.logic_nodes().is_empty());
    }

    #[test]
    fn bool_expr_leaves_and_rendering() {
        let e = BoolExpr::Or(vec![
            BoolExpr::And(vec![BoolExpr::node("n1"), BoolExpr::node("n2")]),
            BoolExpr::node("n3"),
        ]);
        let leaves = e.leaves();
        assert_eq!(leaves.len(), 3);
        assert!(leaves.contains(&id("n2")));
        assert_eq!(e.render(), "(n1 && n2) || n3");
        assert!(!e.is_vacuous());
        assert!(BoolExpr::And(vec![]).is_vacuous());
    }

    #[test]
    fn top_matches_no_alert() {
        assert!(!Watchpoint::Top.matches("anything"));
        assert!(Watchpoint::atom("boot").matches("boot"));
        assert!(!Watchpoint::atom("boot").matches("boots"));
    }
}
