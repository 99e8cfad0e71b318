//! The environment contract.
//!
//! The engine is deliberately ignorant of where telemetry comes from and
//! where commands go: it polls an [`Environment`] once per round for
//! alerts and the current time, and hands commands back to it when
//! guarded effect nodes fire. Implementations decide what those calls
//! mean — a deterministic scenario replay ([`crate::scenario`]), real
//! command transports ([`crate::live`]), or an operator terminal
//! ([`crate::interactive`]).

use serde::{Deserialize, Serialize};

use crate::graph::NodeId;
use crate::time::Timestamp;

/// One piece of telemetry. The `atom` is the string watchpoints match
/// against (exact equality); the `payload` is free-form evidence carried
/// into the trace of whichever nodes the alert fires.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Alert {
    pub atom: String,
    #[serde(default)]
    pub payload: String,
    pub emitted_at: Timestamp,
}

impl Alert {
    pub fn new(atom: impl Into<String>, payload: impl Into<String>, emitted_at: Timestamp) -> Self {
        Alert {
            atom: atom.into(),
            payload: payload.into(),
            emitted_at,
        }
    }
}

/// Whether the environment accepted a command for execution. Acceptance
/// is a hand-off, not completion: results come back later as alerts.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispatchStatus {
    Dispatched,
    Failed,
}

/// What the engine needs from the outside world. One value of this trait
/// backs exactly one run.
pub trait Environment {
    /// Drains and returns every alert due at or before the current time,
    /// in the order they were enqueued.
    fn get_alerts(&mut self) -> Vec<Alert>;

    /// Current time on the engine clock. Must never decrease.
    fn get_time(&mut self) -> Timestamp;

    /// Dispatches a command on behalf of `node`. Must not block on the
    /// command's completion.
    fn execute(&mut self, command: &str, node: &NodeId) -> DispatchStatus;

    /// Earliest instant at which a queued alert becomes due, if the
    /// environment can know that. Live environments return `None`.
    fn next_event_time(&self) -> Option<Timestamp>;

    /// Jumps the clock forward to `t` (never backward). Only meaningful
    /// for simulated clocks; wall-clock environments ignore it.
    fn advance_to(&mut self, t: Timestamp);

    /// True when no alert can ever arrive again unless the engine
    /// dispatches another command first. Drives quiescence detection;
    /// environments with spontaneous sources (wall clock, operators)
    /// return `false` while those sources are open.
    fn is_exhausted(&self) -> bool;
}

impl Environment for Box<dyn Environment> {
    fn get_alerts(&mut self) -> Vec<Alert> {
        (**self).get_alerts()
    }
    fn get_time(&mut self) -> Timestamp {
        (**self).get_time()
    }
    fn execute(&mut self, command: &str, node: &NodeId) -> DispatchStatus {
        (**self).execute(command, node)
    }
    fn next_event_time(&self) -> Option<Timestamp> {
        (**self).next_event_time()
    }
    fn advance_to(&mut self, t: Timestamp) {
        (**self).advance_to(t)
    }
    fn is_exhausted(&self) -> bool {
        (**self).is_exhausted()
    }
}
