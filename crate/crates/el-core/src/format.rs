//! On-disk formats: the graph file and the snapshot file.
//!
//! # Graph files
//!
//! A graph is a JSON object with a `nodes` array and an `edges` array of
//! `[parent, child]` pairs:
//!
//! ```json
//! {
//!   "nodes": [
//!     { "id": "start", "type": "activation", "entry": true },
//!     { "id": "probe", "type": "guarded_effect",
//!       "watchpoint": "host_found", "effect": "nmap -sV target",
//!       "delay_ms": 500, "timeout_ms": 60000 },
//!     { "id": "either", "type": "logic",
//!       "logic_expr": ["or", "start", "probe"] }
//!   ],
//!   "edges": [["start", "probe"], ["start", "either"], ["probe", "either"]]
//! }
//! ```
//!
//! Field discipline per node type:
//!
//! * `activation` — optional `watchpoint` (omitted means always-on),
//!   `delay_ms` (default 0), `timeout_ms` (default `"inf"`), and the
//!   `entry` / `goal` / `break` flags.
//! * `guarded_effect` — like `activation` minus the flags, plus an
//!   optional `effect` command (omitted means no observable effect).
//! * `logic` — requires `logic_expr`, a prefix-form condition: either a
//!   node id or `["and"|"or", operand...]` with at least one operand.
//! * `loop_count` — requires `loop_count`, the iteration budget.
//! * `loop_exit` — no extra fields.
//!
//! Fields that do not apply to a node's type are rejected rather than
//! ignored, as are unknown field names — a silently dropped `timeout_ms`
//! on the wrong node would change what a run proves.
//!
//! # Snapshot files
//!
//! [`SnapshotFile`] captures a run mid-flight: round counter, clock,
//! execution state (including the trace so far), loop counters, and —
//! for simulated runs — the environment's own checkpoint. Timestamps are
//! stored as absolute engine-clock values and restored verbatim.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::graph::{
    BoolExpr, EffectRef, Graph, GraphError, NodeId, NodeKind, NodeLabel, Watchpoint,
};
use crate::scenario::EnvCheckpoint;
use crate::state::StateSnapshot;
use crate::time::{DurationMs, Timeout, Timestamp};

#[derive(Error, Debug)]
pub enum FormatError {
    #[error("malformed JSON")]
    Json(#[from] serde_json::Error),
    #[error("node {node}: a {kind} node requires the {field:?} field")]
    MissingField {
        node: NodeId,
        kind: NodeKind,
        field: &'static str,
    },
    #[error("node {node}: the {field:?} field does not apply to a {kind} node")]
    ForeignField {
        node: NodeId,
        kind: NodeKind,
        field: &'static str,
    },
    #[error("node {node}: bad logic_expr: {detail}")]
    BadCondition { node: NodeId, detail: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Parses a graph file. The result is syntactically well-formed but not
/// yet semantically checked — run [`crate::validate::validate`] next.
pub fn graph_from_json(text: &str) -> Result<Graph, FormatError> {
    let raw: RawGraph = serde_json::from_str(text)?;
    let mut nodes = Vec::with_capacity(raw.nodes.len());
    for rn in &raw.nodes {
        let label = label_from_raw(rn)?;
        nodes.push((rn.id.clone(), label));
    }
    Ok(Graph::new(nodes, raw.edges)?)
}

/// Serializes a graph in the file format, with nodes and edges in
/// ascending id order and all default-valued fields omitted. Parsing the
/// output reproduces the graph exactly.
pub fn graph_to_json(g: &Graph) -> String {
    let raw = RawGraph {
        nodes: g
            .node_ids()
            .map(|id| raw_from_label(id, g.label(id).expect("own id")))
            .collect(),
        edges: g.edges().map(|(p, c)| (p.clone(), c.clone())).collect(),
    };
    let mut out = serde_json::to_string_pretty(&raw).expect("graphs serialize");
    out.push('\n');
    out
}

#[derive(Serialize, Deserialize)]
struct RawGraph {
    nodes: Vec<RawNode>,
    #[serde(default)]
    edges: Vec<(NodeId, NodeId)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    id: NodeId,
    #[serde(rename = "type")]
    kind: NodeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    watchpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    effect: Option<String>,
    #[serde(rename = "delay_ms", default, skip_serializing_if = "Option::is_none")]
    delay: Option<u64>,
    #[serde(rename = "timeout_ms", default, skip_serializing_if = "Option::is_none")]
    timeout: Option<Timeout>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    entry: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    goal: bool,
    #[serde(rename = "break", default, skip_serializing_if = "std::ops::Not::not")]
    is_break: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    logic_expr: Option<ExprForm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    loop_count: Option<i64>,
}

/// Prefix-form boolean condition: a node id, or an operator list.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum ExprForm {
    Leaf(String),
    List(Vec<ExprForm>),
}

fn expr_from_form(form: &ExprForm) -> Result<BoolExpr, String> {
    match form {
        ExprForm::Leaf(s) if s.is_empty() => Err("empty node id".to_string()),
        ExprForm::Leaf(s) => Ok(BoolExpr::Node(NodeId::new(s.clone()))),
        ExprForm::List(items) => {
            let Some((head, operands)) = items.split_first() else {
                return Err("empty list".to_string());
            };
            let op = match head {
                ExprForm::Leaf(s) if s == "and" || s == "or" => s.as_str(),
                ExprForm::Leaf(s) => {
                    return Err(format!("unknown operator {s:?} (expected \"and\" or \"or\")"))
                }
                ExprForm::List(_) => {
                    return Err("the first list element must be \"and\" or \"or\"".to_string())
                }
            };
            if operands.is_empty() {
                return Err(format!("{op:?} needs at least one operand"));
            }
            let operands: Vec<BoolExpr> = operands
                .iter()
                .map(expr_from_form)
                .collect::<Result<_, _>>()?;
            Ok(match op {
                "and" => BoolExpr::And(operands),
                _ => BoolExpr::Or(operands),
            })
        }
    }
}

fn expr_to_form(expr: &BoolExpr) -> ExprForm {
    match expr {
        BoolExpr::Node(id) => ExprForm::Leaf(id.to_string()),
        BoolExpr::And(v) => op_form("and", v),
        BoolExpr::Or(v) => op_form("or", v),
    }
}

fn op_form(op: &str, operands: &[BoolExpr]) -> ExprForm {
    let mut items = vec![ExprForm::Leaf(op.to_string())];
    items.extend(operands.iter().map(expr_to_form));
    ExprForm::List(items)
}

fn label_from_raw(raw: &RawNode) -> Result<NodeLabel, FormatError> {
    let kind = raw.kind;
    let foreign = |field: &'static str| FormatError::ForeignField {
        node: raw.id.clone(),
        kind,
        field,
    };

    // Reject every field the node's type does not carry before looking
    // at the ones it does.
    let is_watchpoint_kind = matches!(kind, NodeKind::Activation | NodeKind::GuardedEffect);
    if !is_watchpoint_kind {
        if raw.watchpoint.is_some() {
            return Err(foreign("watchpoint"));
        }
        if raw.delay.is_some() {
            return Err(foreign("delay_ms"));
        }
        if raw.timeout.is_some() {
            return Err(foreign("timeout_ms"));
        }
    }
    if kind != NodeKind::GuardedEffect && raw.effect.is_some() {
        return Err(foreign("effect"));
    }
    if kind != NodeKind::Activation {
        if raw.entry {
            return Err(foreign("entry"));
        }
        if raw.goal {
            return Err(foreign("goal"));
        }
        if raw.is_break {
            return Err(foreign("break"));
        }
    }
    if kind != NodeKind::Logic && raw.logic_expr.is_some() {
        return Err(foreign("logic_expr"));
    }
    if kind != NodeKind::LoopCount && raw.loop_count.is_some() {
        return Err(foreign("loop_count"));
    }

    let watchpoint = match &raw.watchpoint {
        None => Watchpoint::Top,
        Some(atom) => Watchpoint::atom(atom.clone()),
    };
    let delay = DurationMs::new(raw.delay.unwrap_or(0));
    let timeout = raw.timeout.unwrap_or(Timeout::Infinite);

    Ok(match kind {
        NodeKind::Activation => NodeLabel::Activation {
            watchpoint,
            delay,
            timeout,
            entry: raw.entry,
            goal: raw.goal,
            is_break: raw.is_break,
        },
        NodeKind::GuardedEffect => NodeLabel::GuardedEffect {
            watchpoint,
            effect: raw
                .effect
                .as_ref()
                .map(|c| EffectRef::new(c.clone()))
                .unwrap_or_else(EffectRef::noop),
            delay,
            timeout,
        },
        NodeKind::Logic => {
            let form = raw.logic_expr.as_ref().ok_or(FormatError::MissingField {
                node: raw.id.clone(),
                kind,
                field: "logic_expr",
            })?;
            NodeLabel::Logic {
                condition: expr_from_form(form).map_err(|detail| FormatError::BadCondition {
                    node: raw.id.clone(),
                    detail,
                })?,
            }
        }
        NodeKind::LoopCount => NodeLabel::LoopCount {
            initial: raw.loop_count.ok_or(FormatError::MissingField {
                node: raw.id.clone(),
                kind,
                field: "loop_count",
            })?,
        },
        NodeKind::LoopExit => NodeLabel::LoopExit,
    })
}

fn raw_from_label(id: &NodeId, label: &NodeLabel) -> RawNode {
    let mut raw = RawNode {
        id: id.clone(),
        kind: label.kind(),
        watchpoint: None,
        effect: None,
        delay: None,
        timeout: None,
        entry: false,
        goal: false,
        is_break: false,
        logic_expr: None,
        loop_count: None,
    };
    if let Some(Watchpoint::Atom(a)) = label.watchpoint() {
        raw.watchpoint = Some(a.clone());
    }
    if label.is_watchpoint_node() {
        if !label.delay().is_zero() {
            raw.delay = Some(label.delay().millis());
        }
        if !label.timeout().is_infinite() {
            raw.timeout = Some(label.timeout());
        }
    }
    if let Some(effect) = label.effect() {
        if !effect.is_noop() {
            raw.effect = Some(effect.command().to_string());
        }
    }
    raw.entry = label.is_entry();
    raw.goal = label.is_goal();
    raw.is_break = label.is_break();
    raw.logic_expr = label.condition().map(expr_to_form);
    raw.loop_count = label.loop_count_initial();
    raw
}

/// Everything needed to resume a run: engine bookkeeping, execution
/// state, and (for simulated runs) the environment checkpoint.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct SnapshotFile {
    pub round: u64,
    pub now: Timestamp,
    pub state: StateSnapshot,
    pub counters: BTreeMap<NodeId, i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env: Option<EnvCheckpoint>,
}

impl SnapshotFile {
    pub fn from_json(text: &str) -> Result<Self, FormatError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("snapshots serialize");
        out.push('\n');
        out
    }
}
