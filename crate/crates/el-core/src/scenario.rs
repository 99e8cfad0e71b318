//! Deterministic simulated environments.
//!
//! A [`Scenario`] is a declarative description of everything the outside
//! world will do during a run: alerts injected at fixed instants, plus
//! *reactions* — alerts produced in response to commands the engine
//! dispatches, after a configurable latency. [`SimulatedEnvironment`]
//! replays a scenario on a virtual clock that only moves when the engine
//! asks it to, so a campaign spanning simulated days finishes in
//! milliseconds of wall time and two runs of the same scenario are
//! byte-for-byte identical.
//!
//! # File format
//!
//! ```json
//! {
//!   "scheduled": [
//!     { "at_ms": 0, "atom": "recon_done", "payload": "3 hosts" }
//!   ],
//!   "reactions": [
//!     {
//!       "command_contains": "vssadmin",
//!       "delay_ms": 60000,
//!       "atom": "_EL_EXEC_RESP",
//!       "payload": "shadow copy created",
//!       "repeatable": false
//!     }
//!   ]
//! }
//! ```
//!
//! `payload` defaults to the empty string and `repeatable` to `false`.
//! A reaction matches any dispatched command containing
//! `command_contains` as a substring; every matching reaction schedules
//! its alert `delay_ms` after the dispatch. A non-repeatable reaction is
//! spent after its first match.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::env::{Alert, DispatchStatus, Environment};
use crate::graph::NodeId;
use crate::time::{DurationMs, Timestamp};

/// An alert the world will emit at a fixed instant.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct ScheduledAlert {
    #[serde(rename = "at_ms")]
    pub at: Timestamp,
    pub atom: String,
    #[serde(default)]
    pub payload: String,
}

/// An alert the world will emit in response to a dispatched command.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Reaction {
    /// Substring the dispatched command must contain. The empty string
    /// matches every command.
    pub command_contains: String,
    /// Latency between dispatch and the alert becoming due.
    #[serde(rename = "delay_ms")]
    pub delay: DurationMs,
    pub atom: String,
    #[serde(default)]
    pub payload: String,
    /// When false (the default) the reaction fires at most once.
    #[serde(default)]
    pub repeatable: bool,
}

/// A complete description of simulated world behaviour.
#[derive(Clone, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub scheduled: Vec<ScheduledAlert>,
    #[serde(default)]
    pub reactions: Vec<Reaction>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenarios serialize")
    }
}

/// Where the environment stands mid-run, for snapshot/resume. Captures
/// the clock, every not-yet-delivered alert, and which one-shot
/// reactions are already spent.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct EnvCheckpoint {
    pub now: Timestamp,
    pub pending: Vec<PendingAlert>,
    pub reactions_spent: Vec<bool>,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct PendingAlert {
    pub due: Timestamp,
    pub atom: String,
    #[serde(default)]
    pub payload: String,
}

/// Replays a [`Scenario`] on a virtual clock.
///
/// Alerts are delivered in (due time, enqueue order) — ties between a
/// scheduled alert and a reaction alert due at the same instant resolve
/// to whichever entered the queue first, which is itself deterministic.
#[derive(Debug)]
pub struct SimulatedEnvironment {
    now: Timestamp,
    /// Keyed by (due, sequence number) so iteration order is delivery
    /// order.
    queue: BTreeMap<(Timestamp, u64), PendingAlert>,
    seq: u64,
    reactions: Vec<Reaction>,
    spent: Vec<bool>,
}

impl SimulatedEnvironment {
    pub fn new(scenario: Scenario) -> Self {
        let mut env = SimulatedEnvironment {
            now: Timestamp::ZERO,
            queue: BTreeMap::new(),
            seq: 0,
            spent: vec![false; scenario.reactions.len()],
            reactions: scenario.reactions,
        };
        for s in scenario.scheduled {
            env.enqueue(PendingAlert { due: s.at, atom: s.atom, payload: s.payload });
        }
        env
    }

    /// Rebuilds an environment from a mid-run checkpoint. The scenario
    /// must be the one the checkpoint was taken from (reaction list
    /// lengths are checked; contents are trusted).
    pub fn restore(scenario: Scenario, checkpoint: EnvCheckpoint) -> Result<Self, String> {
        if checkpoint.reactions_spent.len() != scenario.reactions.len() {
            return Err(format!(
                "checkpoint tracks {} reactions but the scenario defines {}",
                checkpoint.reactions_spent.len(),
                scenario.reactions.len()
            ));
        }
        let mut env = SimulatedEnvironment {
            now: checkpoint.now,
            queue: BTreeMap::new(),
            seq: 0,
            spent: checkpoint.reactions_spent,
            reactions: scenario.reactions,
        };
        for p in checkpoint.pending {
            env.enqueue(p);
        }
        Ok(env)
    }

    pub fn checkpoint(&self) -> EnvCheckpoint {
        EnvCheckpoint {
            now: self.now,
            pending: self.queue.values().cloned().collect(),
            reactions_spent: self.spent.clone(),
        }
    }

    pub fn now(&self) -> Timestamp {
        self.now
    }

    pub fn pending_len(&self) -> usize {
        self.queue.len()
    }

    fn enqueue(&mut self, alert: PendingAlert) {
        let key = (alert.due, self.seq);
        self.seq += 1;
        self.queue.insert(key, alert);
    }
}

impl Environment for SimulatedEnvironment {
    fn get_alerts(&mut self) -> Vec<Alert> {
        let mut due = Vec::new();
        while let Some((&key, _)) = self.queue.iter().next() {
            if key.0 > self.now {
                break;
            }
            let pending = self.queue.remove(&key).expect("key just observed");
            due.push(Alert::new(pending.atom, pending.payload, pending.due));
        }
        due
    }

    fn get_time(&mut self) -> Timestamp {
        self.now
    }

    fn execute(&mut self, command: &str, _node: &NodeId) -> DispatchStatus {
        for i in 0..self.reactions.len() {
            if self.spent[i] && !self.reactions[i].repeatable {
                continue;
            }
            if command.contains(&self.reactions[i].command_contains) {
                self.spent[i] = true;
                let r = &self.reactions[i];
                let alert = PendingAlert {
                    due: self.now.plus_delay(r.delay),
                    atom: r.atom.clone(),
                    payload: r.payload.clone(),
                };
                self.enqueue(alert);
            }
        }
        DispatchStatus::Dispatched
    }

    fn next_event_time(&self) -> Option<Timestamp> {
        self.queue.keys().next().map(|(due, _)| *due)
    }

    fn advance_to(&mut self, t: Timestamp) {
        if t > self.now {
            self.now = t;
        }
    }

    fn is_exhausted(&self) -> bool {
        self.queue.is_empty()
    }
}
