//! Proof-of-attack traces.
//!
//! Every time a watchpoint node fires, the engine appends one
//! [`TraceEntry`] recording what fired, when, and on what evidence. The
//! trace is append-only and chronological, and it is the primary output
//! of a run: a completed goal is only as convincing as the trail of
//! alerts and dispatched commands backing it.
//!
//! Two emitters are provided. [`Trace::to_jsonl`] writes one JSON object
//! per line for machine consumption, and [`Trace::to_summary`] writes a
//! human-readable account. Both are deterministic: the same entries
//! produce byte-identical output.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::DispatchStatus;
use crate::graph::NodeId;
use crate::time::Timestamp;

/// Why a node fired.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Cause {
    /// The node's watchpoint is always-on; being active was enough.
    Top,
    /// A join node's condition over already-fired parents became true.
    LogicSatisfied,
    /// An alert matched the node's watchpoint atom. The payload is the
    /// evidence carried by the first matching alert of that round.
    Alert { atom: String, payload: String },
}

/// One fired watchpoint node.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct TraceEntry {
    pub node: NodeId,
    #[serde(rename = "fired_at_ms")]
    pub fired_at: Timestamp,
    pub cause: Cause,
    /// Present only when the node carried a non-empty effect.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effect_command: Option<String>,
    /// Present exactly when `effect_command` is.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dispatch_status: Option<DispatchStatus>,
}

#[derive(Error, Debug)]
pub enum TraceError {
    #[error("line {line}: {source}")]
    BadLine {
        line: usize,
        source: serde_json::Error,
    },
}

/// A chronological, append-only sequence of fired watchpoint nodes.
#[derive(Clone, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Trace(Vec<TraceEntry>);

impl Trace {
    pub fn new() -> Self {
        Trace(Vec::new())
    }

    pub fn push(&mut self, entry: TraceEntry) {
        self.0.push(entry);
    }

    pub fn entries(&self) -> &[TraceEntry] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// One JSON object per line, in firing order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for entry in &self.0 {
            out.push_str(&serde_json::to_string(entry).expect("trace entries serialize"));
            out.push('\n');
        }
        out
    }

    /// Parses the output of [`Trace::to_jsonl`]. Blank lines are ignored.
    pub fn from_jsonl(text: &str) -> Result<Self, TraceError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry = serde_json::from_str(line)
                .map_err(|source| TraceError::BadLine { line: i + 1, source })?;
            entries.push(entry);
        }
        Ok(Trace(entries))
    }

    /// Human-readable account of the run, one block per fired node.
    pub fn to_summary(&self) -> String {
        if self.0.is_empty() {
            return "(no watchpoint nodes fired)\n".to_string();
        }
        let mut out = String::new();
        for (i, e) in self.0.iter().enumerate() {
            out.push_str(&format!("{:>4}. {}  t={}\n", i + 1, e.node, e.fired_at));
            match &e.cause {
                Cause::Top => out.push_str("      cause: always-on watchpoint\n"),
                Cause::LogicSatisfied => out.push_str("      cause: join condition satisfied\n"),
                Cause::Alert { atom, payload } => {
                    out.push_str(&format!("      cause: alert {atom}\n"));
                    if !payload.is_empty() {
                        out.push_str(&format!("      evidence: {payload}\n"));
                    }
                }
            }
            if let Some(cmd) = &e.effect_command {
                let status = match e.dispatch_status {
                    Some(DispatchStatus::Dispatched) => "dispatched",
                    Some(DispatchStatus::Failed) => "dispatch FAILED",
                    None => "not dispatched",
                };
                out.push_str(&format!("      effect: {cmd}  [{status}]\n"));
            }
        }
        out
    }
}

impl<'a> IntoIterator for &'a Trace {
    type Item = &'a TraceEntry;
    type IntoIter = std::slice::Iter<'a, TraceEntry>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}
