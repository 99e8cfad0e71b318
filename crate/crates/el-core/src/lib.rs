//! Coordination engine for EL attack graphs.
//!
//! An EL graph is an executable description of a multi-step operation:
//! watchpoint nodes wait for telemetry from the environment, guarded
//! effect nodes launch commands when their watchpoint is satisfied,
//! logic nodes join parallel branches, and loop nodes repeat subgraphs
//! a bounded or unbounded number of times. This crate contains the
//! whole pipeline around that model:
//!
//! * [`graph`] — the typed graph itself plus accessors,
//! * [`validate`] — structural well-formedness rules,
//! * [`collapse`] — merging chained logic nodes into single join points,
//! * [`loops`] — loop membership and reset-set discovery,
//! * [`format`] — the on-disk JSON representation of graphs and snapshots,
//! * [`dot`] — Graphviz export,
//! * [`state`] — the delayed/active/fired bookkeeping the engine mutates,
//! * [`engine`] — the round-based execution loop,
//! * [`env`], [`scenario`], [`live`], [`interactive`] — environments the
//!   engine runs against (deterministic simulation, local/remote command
//!   transports, operator input),
//! * [`trace`] — chronological proof-of-attack records and their emitters,
//! * [`reference`] — an intentionally naive re-implementation of the
//!   semantics used as a differential oracle in tests.

#![forbid(unsafe_code)]

pub mod collapse;
pub mod dot;
pub mod engine;
pub mod env;
pub mod format;
pub mod graph;
pub mod interactive;
pub mod live;
pub mod loops;
pub mod reference;
pub mod scenario;
pub mod state;
pub mod time;
pub mod trace;
pub mod validate;

pub use engine::{Engine, EngineConfig, EngineError, Mode, RunLimits, RunOutcome, RunSummary};
pub use env::{Alert, DispatchStatus, Environment};
pub use graph::{BoolExpr, EffectRef, Graph, GraphError, NodeId, NodeKind, NodeLabel, Watchpoint};
pub use state::{ExecutionState, StateError};
pub use time::{DurationMs, Timeout, Timestamp};
pub use trace::{Cause, Trace, TraceEntry};
