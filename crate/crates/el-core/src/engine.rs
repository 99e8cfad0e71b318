//! The coordination engine: round-based execution of a collapsed,
//! validated graph against an [`Environment`].
//!
//! # The round
//!
//! Execution proceeds in rounds. One round, at environment time `t`:
//!
//! 1. drain the environment's due alerts;
//! 2. **activate delays** — every delayed node whose delay has elapsed
//!    moves to the active set, its timeout clock starting at `t`;
//! 3. **collect triggered nodes** — active nodes whose always-on
//!    watchpoint is armed, active logic nodes whose condition over fired
//!    parents holds, and active nodes matched by a drained alert;
//! 4. **fire them** — their not-yet-seen children are scheduled (delayed
//!    if they carry a delay, active otherwise), the fired nodes move
//!    from active to fired, effects are dispatched, and watchpoint nodes
//!    (except break nodes) are appended to the trace;
//! 5. **fire loop counts** — each active loop count resets its body and
//!    either re-enters it (decrementing its budget) or, with budget
//!    exhausted, activates its loop exit;
//! 6. **fire loop exits** — each active loop exit resets its whole loop
//!    (body, counter, break node) and then fires like any other node;
//! 7. **garbage-collect** — active nodes whose timeout has expired are
//!    withdrawn. Firing wins over expiry: a node that fires at its exact
//!    expiry instant fires.
//!
//! The run is *done* once any goal node has fired.
//!
//! # Time
//!
//! The engine never sleeps between rounds in simulated mode. When no
//! round could do anything at the current instant, it computes the next
//! instant at which one could — the earliest pending alert, delay
//! expiry, or timeout — and jumps the environment clock straight there.
//! If no such instant exists and the environment can produce nothing
//! further, the run is *quiescent*: the attack cannot make progress.
//! In live mode the clock is the wall clock; the engine polls every
//! configured tick instead of jumping.
//!
//! # Invariants and instrumentation
//!
//! After every mutating sub-step, the delayed/active/fired sets are
//! pairwise disjoint, and every state change strictly shrinks a
//! progress measure (remaining loop budget, then remaining path weight,
//! then delayed-set size — compared lexicographically). Construct the
//! engine with instrumentation enabled and pass an [`Inspector`] to
//! observe both after each sub-step; the test suite holds the engine to
//! exactly these claims.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::collapse::is_collapsed;
use crate::env::{Alert, Environment};
use crate::format::SnapshotFile;
use crate::graph::{BoolExpr, Graph, NodeId, NodeKind};
use crate::loops::{compute_loop_info, LoopInfo};
use crate::scenario::EnvCheckpoint;
use crate::state::ExecutionState;
use crate::time::{DurationMs, Timestamp};
use crate::trace::{Cause, TraceEntry};
use crate::validate::{validate, ValidationReport};

/// Evaluates a logic condition against the set of fired nodes.
pub fn eval_condition(condition: &BoolExpr, fired: &BTreeSet<NodeId>) -> bool {
    match condition {
        BoolExpr::Node(id) => fired.contains(id),
        BoolExpr::And(operands) => operands.iter().all(|e| eval_condition(e, fired)),
        BoolExpr::Or(operands) => operands.iter().any(|e| eval_condition(e, fired)),
    }
}

/// How the engine treats time.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Mode {
    /// Virtual clock, jumped forward on demand. Runs are deterministic
    /// and as fast as the host allows.
    Simulated,
    /// Wall clock; the engine polls the environment every tick.
    Live,
}

#[derive(Clone, Copy, Debug)]
pub struct EngineConfig {
    pub mode: Mode,
    /// Poll interval for live mode, and for simulated runs whose
    /// environment has an open-ended source (an operator terminal).
    pub tick: DurationMs,
    /// When set, sub-step records are produced for the [`Inspector`].
    pub instrument: bool,
}

impl EngineConfig {
    pub fn simulated() -> Self {
        EngineConfig {
            mode: Mode::Simulated,
            tick: DurationMs::new(25),
            instrument: false,
        }
    }

    pub fn live() -> Self {
        EngineConfig {
            mode: Mode::Live,
            tick: DurationMs::new(250),
            instrument: false,
        }
    }

    pub fn with_tick(mut self, ms: u64) -> Self {
        self.tick = DurationMs::new(ms);
        self
    }

    pub fn with_instrumentation(mut self) -> Self {
        self.instrument = true;
        self
    }
}

/// Optional bounds on a run. A bound of `None` means unbounded.
#[derive(Clone, Copy, Debug, Default)]
pub struct RunLimits {
    pub max_rounds: Option<u64>,
    /// Budget on engine-clock time since the run began.
    pub max_time: Option<DurationMs>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum RunOutcome {
    /// A goal node fired.
    Done,
    /// A limit from [`RunLimits`] was reached first.
    RoundLimit,
    /// No round can ever do anything again: nothing is actionable now,
    /// no future delay/timeout/alert exists, and the environment is
    /// exhausted.
    Quiescent,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct RunSummary {
    pub outcome: RunOutcome,
    pub rounds: u64,
    pub final_time: Timestamp,
}

/// What one round did, for logging and tests.
#[derive(Clone, Debug)]
pub struct RoundReport {
    pub round: u64,
    pub time: Timestamp,
    pub alerts: Vec<Alert>,
    pub triggered: BTreeSet<NodeId>,
    /// Nodes newly in the fired set at the end of the round (a reset may
    /// remove nodes that fired earlier; those are not listed).
    pub newly_fired: BTreeSet<NodeId>,
    pub state_changed: bool,
    pub done: bool,
}

/// The lexicographic progress measure: every state-changing sub-step
/// strictly decreases it (on graphs whose loops are all finite).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub struct ProgressMeasure {
    /// Sum of remaining loop budgets. Budget `-1` (loop forever) makes
    /// this component meaningless, which is exactly why such graphs may
    /// run forever.
    pub loop_total: i64,
    /// Total path weight of delayed and active nodes: for each, the
    /// number of node-visits summed over all forward paths from it
    /// (loop re-entry edges excluded).
    pub path_total: u128,
    /// Number of delayed nodes.
    pub delayed_count: u64,
}

/// The five mutating sub-steps of a round.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SubStep {
    ActivateDelays,
    FireTriggered,
    FireLoopCounts,
    FireLoopExits,
    GarbageCollection,
}

impl std::fmt::Display for SubStep {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            SubStep::ActivateDelays => "activate-delays",
            SubStep::FireTriggered => "fire-triggered",
            SubStep::FireLoopCounts => "fire-loop-counts",
            SubStep::FireLoopExits => "fire-loop-exits",
            SubStep::GarbageCollection => "garbage-collection",
        };
        f.write_str(name)
    }
}

/// Snapshot of the engine's health immediately after one sub-step.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SubStepRecord {
    pub round: u64,
    pub step: SubStep,
    pub time: Timestamp,
    pub delayed: usize,
    pub active: usize,
    pub fired: usize,
    pub measure: ProgressMeasure,
    pub partition_ok: bool,
    pub state_changed: bool,
}

/// Read-only window into the engine for [`Inspector::round_end`].
pub struct EngineView<'a> {
    pub state: &'a ExecutionState,
    pub counters: &'a BTreeMap<NodeId, i64>,
    pub round: u64,
    pub time: Timestamp,
}

/// Observation hooks. All methods default to doing nothing; sub-step
/// records arrive only when the engine was configured with
/// instrumentation.
pub trait Inspector {
    fn sub_step(&mut self, _record: &SubStepRecord) {}
    fn round_end(&mut self, _report: &RoundReport, _view: &EngineView<'_>) {}
}

#[derive(Error, Debug)]
pub enum EngineError {
    #[error("graph failed validation:\n{0}")]
    InvalidGraph(ValidationReport),
    #[error("graph has logic nodes feeding logic nodes; collapse it first")]
    NotCollapsed,
    #[error("the engine must be initialized (or restored) before stepping")]
    NotInitialized,
    #[error("this configuration needs a non-zero tick interval to wait on a live source")]
    ZeroTick,
    #[error("snapshot does not fit this graph: {0}")]
    BadSnapshot(String),
}

type Fingerprint = (
    BTreeMap<NodeId, Timestamp>,
    BTreeMap<NodeId, Timestamp>,
    BTreeSet<NodeId>,
    BTreeMap<NodeId, i64>,
);

/// Executes one graph against one environment. See the module docs for
/// the round structure.
pub struct Engine<'g> {
    graph: &'g Graph,
    cfg: EngineConfig,

    // Structure precomputed at construction.
    loop_info: BTreeMap<NodeId, LoopInfo>,
    exit_resets: BTreeMap<NodeId, BTreeSet<NodeId>>,
    goals: BTreeSet<NodeId>,
    path_weight: BTreeMap<NodeId, u128>,

    // Run state.
    state: ExecutionState,
    counters: BTreeMap<NodeId, i64>,
    round: u64,
    now: Timestamp,
    epoch: Timestamp,
    done: bool,
    initialized: bool,
}

impl<'g> Engine<'g> {
    /// Builds an engine for `graph`, which must pass validation and be
    /// in collapsed form. All loop structure and path weights are
    /// precomputed here; the run itself allocates only per-round data.
    pub fn new(graph: &'g Graph, cfg: EngineConfig) -> Result<Self, EngineError> {
        let report = validate(graph);
        if !report.is_valid() {
            return Err(EngineError::InvalidGraph(report));
        }
        if !is_collapsed(graph) {
            return Err(EngineError::NotCollapsed);
        }

        let loop_info = compute_loop_info(graph);
        let exit_resets = loop_info
            .values()
            .map(|info| (info.exit_node.clone(), info.exit_reset_nodes.clone()))
            .collect();
        let re_entry_edges: BTreeSet<(NodeId, NodeId)> = loop_info
            .values()
            .map(|info| (info.loop_count.clone(), info.first_node.clone()))
            .collect();
        let path_weight = path_weights(graph, &re_entry_edges);
        let counters = loop_info
            .keys()
            .map(|l| {
                let initial = graph.label_of(l).loop_count_initial().expect("loop count");
                (l.clone(), initial)
            })
            .collect();

        Ok(Engine {
            graph,
            cfg,
            loop_info,
            exit_resets,
            goals: graph.goal_nodes(),
            path_weight,
            state: ExecutionState::new(),
            counters,
            round: 0,
            now: Timestamp::ZERO,
            epoch: Timestamp::ZERO,
            done: false,
            initialized: false,
        })
    }

    /// Rebuilds an engine mid-run from a snapshot. The snapshot must
    /// belong to this graph: unknown nodes, overlapping state sets, or a
    /// mismatched counter table are rejected.
    pub fn resume(
        graph: &'g Graph,
        cfg: EngineConfig,
        snapshot: &SnapshotFile,
    ) -> Result<Self, EngineError> {
        let mut engine = Engine::new(graph, cfg)?;
        let state = ExecutionState::from_snapshot(snapshot.state.clone())
            .map_err(|e| EngineError::BadSnapshot(e.to_string()))?;
        for n in state
            .delayed()
            .keys()
            .chain(state.active().keys())
            .chain(state.fired().iter())
        {
            if !graph.contains(n) {
                return Err(EngineError::BadSnapshot(format!("unknown node {n}")));
            }
        }
        if !state.partition_ok() {
            return Err(EngineError::BadSnapshot(
                "delayed/active/fired sets overlap".to_string(),
            ));
        }
        let counter_keys: BTreeSet<NodeId> = snapshot.counters.keys().cloned().collect();
        if counter_keys != graph.loop_count_nodes() {
            return Err(EngineError::BadSnapshot(
                "loop counter table does not match the graph's loop count nodes".to_string(),
            ));
        }
        if let Some((n, c)) = snapshot.counters.iter().find(|(_, c)| **c < -1) {
            return Err(EngineError::BadSnapshot(format!(
                "loop counter for {n} is {c}; the minimum is -1"
            )));
        }
        if !snapshot.now.is_finite() {
            return Err(EngineError::BadSnapshot("clock reads infinity".to_string()));
        }

        engine.state = state;
        engine.counters = snapshot.counters.clone();
        engine.round = snapshot.round;
        engine.now = snapshot.now;
        // Timestamps in a snapshot are absolute since the original run
        // began, so time budgets keep measuring the whole campaign.
        engine.epoch = Timestamp::ZERO;
        engine.done = engine.goal_reached();
        engine.initialized = true;
        Ok(engine)
    }

    /// Starts a fresh run: every entry node becomes active with its
    /// timeout clock running, loop counters return to their budgets, and
    /// the trace is emptied. The environment's current time becomes the
    /// run epoch.
    pub fn init(&mut self, env: &mut dyn Environment) {
        let t = env.get_time();
        self.state = ExecutionState::new();
        for entry in self.graph.entry_nodes() {
            let expires = t.plus_timeout(self.graph.label_of(&entry).timeout());
            self.state.active.insert(entry, expires);
        }
        for l in self.loop_info.keys() {
            let initial = self.graph.label_of(l).loop_count_initial().expect("loop count");
            self.counters.insert(l.clone(), initial);
        }
        self.round = 0;
        self.now = t;
        self.epoch = t;
        self.done = false;
        self.initialized = true;
    }

    // ------------------------------------------------------------------
    // Sub-steps. Each is callable on its own (the reference tests drive
    // them directly); `step` strings them together in round order.
    // ------------------------------------------------------------------

    /// Moves every delayed node whose delay has elapsed into the active
    /// set, with its timeout measured from `now`.
    pub fn activate_delays(&mut self, now: Timestamp) {
        let due: Vec<NodeId> = self
            .state
            .delayed
            .iter()
            .filter(|(_, at)| **at <= now)
            .map(|(n, _)| n.clone())
            .collect();
        for n in due {
            self.state.delayed.remove(&n);
            let expires = now.plus_timeout(self.graph.label_of(&n).timeout());
            self.state.active.insert(n, expires);
        }
    }

    /// The triggered set for this round: active always-on watchpoints,
    /// active logic nodes with a satisfied condition, and active nodes
    /// matched by one of `alerts`. Loop counts and exits never trigger
    /// here — they have dedicated sub-steps.
    pub fn triggered(&self, alerts: &[Alert]) -> BTreeSet<NodeId> {
        let mut out = BTreeSet::new();
        for n in self.state.active.keys() {
            let label = self.graph.label_of(n);
            let hit = match label.kind() {
                NodeKind::Logic => {
                    eval_condition(label.condition().expect("logic"), &self.state.fired)
                }
                NodeKind::LoopCount | NodeKind::LoopExit => false,
                NodeKind::Activation | NodeKind::GuardedEffect => {
                    let wp = label.watchpoint().expect("watchpoint node");
                    wp.is_top() || alerts.iter().any(|a| wp.matches(&a.atom))
                }
            };
            if hit {
                out.insert(n.clone());
            }
        }
        out
    }

    /// Fires `triggered` (which must be a subset of the active set):
    /// schedules their unseen children, moves them from active to fired,
    /// dispatches their effects, and appends watchpoint firings to the
    /// trace with causes attributed from `alerts`.
    pub fn fire_triggered(
        &mut self,
        triggered: &BTreeSet<NodeId>,
        alerts: &[Alert],
        now: Timestamp,
        env: &mut dyn Environment,
    ) {
        let causes = self.attribute_causes(triggered, alerts);
        self.fire_set(triggered, &causes, now, env);
    }

    /// Processes every active loop count: the loop body is reset, and
    /// the loop either re-enters its first node (spending budget) or,
    /// with budget exhausted, hands control to its loop exit.
    pub fn fire_loop_counts(&mut self, now: Timestamp) {
        let due: Vec<NodeId> = self
            .state
            .active
            .keys()
            .filter(|n| self.loop_info.contains_key(*n))
            .cloned()
            .collect();
        for l in due {
            let (first, exit, internal) = {
                let info = &self.loop_info[&l];
                (
                    info.first_node.clone(),
                    info.exit_node.clone(),
                    info.internal_nodes.clone(),
                )
            };
            self.state.reset_nodes(&internal);

            let budget = self.counters[&l];
            if budget == 0 {
                // Spent: the exit becomes active (it never times out —
                // the loop has already happened) and the count itself
                // counts as fired.
                self.state.active.insert(exit, Timestamp::Infinity);
                self.state.fired.insert(l.clone());
            } else {
                if budget > 0 {
                    *self.counters.get_mut(&l).expect("known counter") = budget - 1;
                }
                let delay = self.graph.label_of(&first).delay();
                if !delay.is_zero() {
                    self.state.delayed.insert(first, now.plus_delay(delay));
                } else {
                    let expires = now.plus_timeout(self.graph.label_of(&first).timeout());
                    self.state.active.insert(first, expires);
                }
            }
            self.state.active.remove(&l);
        }
    }

    /// Fires every active loop exit: the whole loop — body, counter, and
    /// break node — is reset first, then the exit fires like any other
    /// node, enabling whatever follows the loop.
    pub fn fire_loop_exits(&mut self, now: Timestamp, env: &mut dyn Environment) {
        let due: BTreeSet<NodeId> = self
            .state
            .active
            .keys()
            .filter(|n| self.exit_resets.contains_key(*n))
            .cloned()
            .collect();
        for x in &due {
            let reset = self.exit_resets[x].clone();
            self.state.reset_nodes(&reset);
        }
        self.fire_set(&due, &BTreeMap::new(), now, env);
    }

    /// Withdraws every active node whose timeout expired at or before
    /// `now`. Runs after the firing sub-steps, so a node reaching its
    /// exact expiry instant still gets to fire first.
    pub fn garbage_collect(&mut self, now: Timestamp) {
        self.state.active.retain(|_, expires| !(*expires <= now));
    }

    /// The shared firing engine behind [`Self::fire_triggered`] and
    /// [`Self::fire_loop_exits`].
    fn fire_set(
        &mut self,
        fired_now: &BTreeSet<NodeId>,
        causes: &BTreeMap<NodeId, Cause>,
        now: Timestamp,
        env: &mut dyn Environment,
    ) {
        debug_assert!(
            fired_now.iter().all(|n| self.state.active.contains_key(n)),
            "only active nodes fire"
        );

        // Children never seen before (not delayed, active, or fired) are
        // scheduled. The membership test is against the state before any
        // of this sub-step's own placements.
        let mut frontier = BTreeSet::new();
        for n in fired_now {
            for c in self.graph.children_of(n) {
                if !self.state.delayed.contains_key(c)
                    && !self.state.active.contains_key(c)
                    && !self.state.fired.contains(c)
                {
                    frontier.insert(c.clone());
                }
            }
        }
        for c in frontier {
            let delay = self.graph.label_of(&c).delay();
            if !delay.is_zero() {
                self.state.delayed.insert(c, now.plus_delay(delay));
            } else {
                let expires = now.plus_timeout(self.graph.label_of(&c).timeout());
                self.state.active.insert(c, expires);
            }
        }

        for n in fired_now {
            self.state.active.remove(n);
        }
        self.state.fired.extend(fired_now.iter().cloned());

        // Only watchpoint nodes are evidence; break nodes steer their
        // loop without entering the trace.
        for n in fired_now {
            let label = self.graph.label_of(n);
            if !label.is_watchpoint_node() || label.is_break() {
                continue;
            }
            let mut effect_command = None;
            let mut dispatch_status = None;
            if let Some(effect) = label.effect() {
                if !effect.is_noop() {
                    effect_command = Some(effect.command().to_string());
                    dispatch_status = Some(env.execute(effect.command(), n));
                }
            }
            self.state.trace.push(TraceEntry {
                node: n.clone(),
                fired_at: now,
                cause: causes.get(n).cloned().unwrap_or(Cause::Top),
                effect_command,
                dispatch_status,
            });
        }
    }

    /// Why each triggered watchpoint node fired. Atom watchpoints credit
    /// the first matching alert of the round, in delivery order.
    fn attribute_causes(
        &self,
        triggered: &BTreeSet<NodeId>,
        alerts: &[Alert],
    ) -> BTreeMap<NodeId, Cause> {
        let mut causes = BTreeMap::new();
        for n in triggered {
            let label = self.graph.label_of(n);
            let cause = match label.kind() {
                NodeKind::Logic => Cause::LogicSatisfied,
                NodeKind::LoopCount | NodeKind::LoopExit => continue,
                NodeKind::Activation | NodeKind::GuardedEffect => {
                    let wp = label.watchpoint().expect("watchpoint node");
                    if wp.is_top() {
                        Cause::Top
                    } else {
                        let hit = alerts
                            .iter()
                            .find(|a| wp.matches(&a.atom))
                            .expect("triggered atom nodes have a matching alert");
                        Cause::Alert {
                            atom: hit.atom.clone(),
                            payload: hit.payload.clone(),
                        }
                    }
                }
            };
            causes.insert(n.clone(), cause);
        }
        causes
    }

    /// Runs one full round against `env`, returning what happened.
    pub fn step(
        &mut self,
        env: &mut dyn Environment,
        mut inspector: Option<&mut (dyn Inspector + '_)>,
    ) -> Result<RoundReport, EngineError> {
        if !self.initialized {
            return Err(EngineError::NotInitialized);
        }
        self.round += 1;
        let round = self.round;

        let alerts = env.get_alerts();
        let now = env.get_time();
        self.now = now;
        let before = self.fingerprint();
        let fired_before = self.state.fired.clone();

        self.substep(SubStep::ActivateDelays, now, &mut inspector, env, |e, _| {
            e.activate_delays(now)
        });
        let triggered = self.triggered(&alerts);
        self.substep(SubStep::FireTriggered, now, &mut inspector, env, |e, env| {
            e.fire_triggered(&triggered, &alerts, now, env)
        });
        self.substep(SubStep::FireLoopCounts, now, &mut inspector, env, |e, _| {
            e.fire_loop_counts(now)
        });
        self.substep(SubStep::FireLoopExits, now, &mut inspector, env, |e, env| {
            e.fire_loop_exits(now, env)
        });
        self.substep(SubStep::GarbageCollection, now, &mut inspector, env, |e, _| {
            e.garbage_collect(now)
        });

        self.done = self.goal_reached();
        let report = RoundReport {
            round,
            time: now,
            alerts,
            triggered,
            newly_fired: self.state.fired.difference(&fired_before).cloned().collect(),
            state_changed: before != self.fingerprint(),
            done: self.done,
        };
        if let Some(ins) = inspector.as_deref_mut() {
            ins.round_end(
                &report,
                &EngineView {
                    state: &self.state,
                    counters: &self.counters,
                    round,
                    time: now,
                },
            );
        }
        Ok(report)
    }

    fn substep(
        &mut self,
        step: SubStep,
        now: Timestamp,
        inspector: &mut Option<&mut (dyn Inspector + '_)>,
        env: &mut dyn Environment,
        f: impl FnOnce(&mut Self, &mut dyn Environment),
    ) {
        if !self.cfg.instrument || inspector.is_none() {
            f(self, env);
            return;
        }
        let before = self.fingerprint();
        f(self, env);
        let record = SubStepRecord {
            round: self.round,
            step,
            time: now,
            delayed: self.state.delayed.len(),
            active: self.state.active.len(),
            fired: self.state.fired.len(),
            measure: self.measure(),
            partition_ok: self.state.partition_ok(),
            state_changed: before != self.fingerprint(),
        };
        if let Some(ins) = inspector.as_deref_mut() {
            ins.sub_step(&record);
        }
    }

    /// Runs rounds until the goal fires, a limit is hit, or the run goes
    /// quiescent. Initializes first if nothing has initialized the
    /// engine yet.
    pub fn run(
        &mut self,
        env: &mut dyn Environment,
        limits: RunLimits,
        mut inspector: Option<&mut (dyn Inspector + '_)>,
    ) -> Result<RunSummary, EngineError> {
        if !self.initialized {
            self.init(env);
        }
        if self.cfg.mode == Mode::Live && self.cfg.tick.is_zero() {
            return Err(EngineError::ZeroTick);
        }

        let outcome = loop {
            if self.done {
                break RunOutcome::Done;
            }
            if limits.max_rounds.is_some_and(|m| self.round >= m) {
                break RunOutcome::RoundLimit;
            }
            match self.cfg.mode {
                Mode::Simulated => {
                    let now = env.get_time();
                    if !self.actionable(env.next_event_time(), now) {
                        match self.next_wakeup(env.next_event_time(), now) {
                            Some(t) => {
                                if self.past_budget(t, &limits) {
                                    break RunOutcome::RoundLimit;
                                }
                                env.advance_to(t);
                            }
                            None if env.is_exhausted() => break RunOutcome::Quiescent,
                            None => {
                                // An open-ended source (an operator) may
                                // still produce alerts: wait in real time
                                // and poll again.
                                if self.cfg.tick.is_zero() {
                                    return Err(EngineError::ZeroTick);
                                }
                                sleep_tick(self.cfg.tick);
                            }
                        }
                        continue;
                    }
                    if self.past_budget(now, &limits) {
                        break RunOutcome::RoundLimit;
                    }
                    self.step(env, inspector.as_deref_mut())?;
                }
                Mode::Live => {
                    let now = env.get_time();
                    if self.past_budget(now, &limits) {
                        break RunOutcome::RoundLimit;
                    }
                    self.step(env, inspector.as_deref_mut())?;
                    if !self.done {
                        sleep_tick(self.cfg.tick);
                    }
                }
            }
        };
        Ok(RunSummary {
            outcome,
            rounds: self.round,
            final_time: self.now,
        })
    }

    /// Whether a round at `now` would do anything: something to
    /// activate, trigger, process, or collect.
    fn actionable(&self, env_next: Option<Timestamp>, now: Timestamp) -> bool {
        if env_next.is_some_and(|t| t <= now) {
            return true;
        }
        if self.state.delayed.values().any(|at| *at <= now) {
            return true;
        }
        if self.state.active.values().any(|expires| *expires <= now) {
            return true;
        }
        self.state.active.keys().any(|n| {
            let label = self.graph.label_of(n);
            match label.kind() {
                NodeKind::Logic => {
                    eval_condition(label.condition().expect("logic"), &self.state.fired)
                }
                NodeKind::LoopCount | NodeKind::LoopExit => true,
                NodeKind::Activation | NodeKind::GuardedEffect => {
                    label.watchpoint().expect("watchpoint node").is_top()
                }
            }
        })
    }

    /// Earliest future instant at which a round could do something, if
    /// one exists: the next alert, delay expiry, or finite timeout.
    fn next_wakeup(&self, env_next: Option<Timestamp>, now: Timestamp) -> Option<Timestamp> {
        let mut best: Option<Timestamp> = None;
        let mut consider = |t: Timestamp| {
            if t.is_finite() && t > now && best.map_or(true, |b| t < b) {
                best = Some(t);
            }
        };
        if let Some(t) = env_next {
            consider(t);
        }
        for at in self.state.delayed.values() {
            consider(*at);
        }
        for expires in self.state.active.values() {
            consider(*expires);
        }
        best
    }

    fn past_budget(&self, t: Timestamp, limits: &RunLimits) -> bool {
        match limits.max_time {
            None => false,
            Some(budget) => match t.since(self.epoch) {
                Some(elapsed) => elapsed > budget.millis(),
                None => true,
            },
        }
    }

    fn goal_reached(&self) -> bool {
        self.goals.iter().any(|g| self.state.fired.contains(g))
    }

    fn fingerprint(&self) -> Fingerprint {
        (
            self.state.delayed.clone(),
            self.state.active.clone(),
            self.state.fired.clone(),
            self.counters.clone(),
        )
    }

    /// The current progress measure; see [`ProgressMeasure`].
    pub fn measure(&self) -> ProgressMeasure {
        let path_total = self
            .state
            .delayed
            .keys()
            .chain(self.state.active.keys())
            .map(|n| self.path_weight[n])
            .fold(0u128, u128::saturating_add);
        ProgressMeasure {
            loop_total: self.counters.values().sum(),
            path_total,
            delayed_count: self.state.delayed.len() as u64,
        }
    }

    /// Packages the run for [`Self::resume`]. Pass the environment's own
    /// checkpoint for simulated runs so pending alerts survive too.
    pub fn snapshot(&self, env: Option<EnvCheckpoint>) -> SnapshotFile {
        SnapshotFile {
            round: self.round,
            now: self.now,
            state: self.state.to_snapshot(),
            counters: self.counters.clone(),
            env,
        }
    }

    pub fn graph(&self) -> &Graph {
        self.graph
    }

    pub fn state(&self) -> &ExecutionState {
        &self.state
    }

    pub fn counters(&self) -> &BTreeMap<NodeId, i64> {
        &self.counters
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn now(&self) -> Timestamp {
        self.now
    }

    pub fn is_done(&self) -> bool {
        self.done
    }
}

fn sleep_tick(tick: DurationMs) {
    std::thread::sleep(std::time::Duration::from_millis(tick.millis()));
}

/// Per-node path weight: the number of node-visits summed over all
/// maximal forward paths from the node, with `skip` edges (loop
/// re-entries) removed. A childless node weighs 1. Saturating, so
/// pathologically wide graphs degrade gracefully instead of wrapping.
fn path_weights(g: &Graph, skip: &BTreeSet<(NodeId, NodeId)>) -> BTreeMap<NodeId, u128> {
    // (paths from n, total weight of those paths), computed bottom-up.
    let mut memo: BTreeMap<NodeId, (u128, u128)> = BTreeMap::new();
    enum Frame<'a> {
        Enter(&'a NodeId),
        Leave(&'a NodeId),
    }
    for start in g.node_ids() {
        if memo.contains_key(start) {
            continue;
        }
        let mut stack = vec![Frame::Enter(start)];
        while let Some(frame) = stack.pop() {
            match frame {
                Frame::Enter(n) => {
                    if memo.contains_key(n) {
                        continue;
                    }
                    stack.push(Frame::Leave(n));
                    for c in g.children_of(n) {
                        if skip.contains(&(n.clone(), c.clone())) || memo.contains_key(c) {
                            continue;
                        }
                        stack.push(Frame::Enter(c));
                    }
                }
                Frame::Leave(n) => {
                    let mut paths = 0u128;
                    let mut weight = 0u128;
                    for c in g.children_of(n) {
                        if skip.contains(&(n.clone(), c.clone())) {
                            continue;
                        }
                        let (cp, cw) = memo[c];
                        paths = paths.saturating_add(cp);
                        weight = weight.saturating_add(cw).saturating_add(cp);
                    }
                    if paths == 0 {
                        // Childless: the single path [n].
                        memo.insert(n.clone(), (1, 1));
                    } else {
                        memo.insert(n.clone(), (paths, weight));
                    }
                }
            }
        }
    }
    memo.into_iter().map(|(n, (_, w))| (n, w)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{EffectRef, NodeLabel, Watchpoint};
    use crate::scenario::{Reaction, Scenario, ScheduledAlert, SimulatedEnvironment};
    use crate::time::Timeout;
    use crate::trace::Cause;

    fn nid(s: &str) -> NodeId {
        NodeId::from(s)
    }

    fn run_to_end(g: &Graph, scenario: Scenario) -> (RunSummary, Vec<TraceEntry>) {
        let mut engine = Engine::new(g, EngineConfig::simulated()).unwrap();
        let mut env = SimulatedEnvironment::new(scenario);
        let summary = engine.run(&mut env, RunLimits::default(), None).unwrap();
        (summary, engine.state().trace().entries().to_vec())
    }

    fn fired_nodes(trace: &[TraceEntry]) -> Vec<&str> {
        trace.iter().map(|e| e.node.as_str()).collect()
    }

    #[test]
    fn a_top_chain_fires_one_node_per_round() {
        let g = Graph::new(
            vec![
                (nid("e"), NodeLabel::activation(Watchpoint::Top).marked_entry()),
                (nid("g"), NodeLabel::activation(Watchpoint::Top).marked_goal()),
            ],
            vec![(nid("e"), nid("g"))],
        )
        .unwrap();
        let (summary, trace) = run_to_end(&g, Scenario::default());
        assert_eq!(summary.outcome, RunOutcome::Done);
        assert_eq!(summary.rounds, 2);
        assert_eq!(fired_nodes(&trace), vec!["e", "g"]);
        assert!(trace.iter().all(|e| e.fired_at == Timestamp::ZERO));
        assert!(trace.iter().all(|e| e.cause == Cause::Top));
    }

    #[test]
    fn alerts_gate_firing_and_carry_their_evidence() {
        let g = Graph::new(
            vec![
                (nid("e"), NodeLabel::activation(Watchpoint::Top).marked_entry()),
                (
                    nid("seen"),
                    NodeLabel::activation(Watchpoint::atom("beacon")).marked_goal(),
                ),
            ],
            vec![(nid("e"), nid("seen"))],
        )
        .unwrap();
        let scenario = Scenario {
            scheduled: vec![
                ScheduledAlert {
                    at: Timestamp::Millis(100),
                    atom: "beacon".into(),
                    payload: "first contact".into(),
                },
                ScheduledAlert {
                    at: Timestamp::Millis(100),
                    atom: "beacon".into(),
                    payload: "second contact".into(),
                },
            ],
            reactions: vec![],
        };
        let (summary, trace) = run_to_end(&g, scenario);
        assert_eq!(summary.outcome, RunOutcome::Done);
        assert_eq!(summary.final_time, Timestamp::Millis(100));
        assert_eq!(
            trace[1].cause,
            Cause::Alert { atom: "beacon".into(), payload: "first contact".into() },
            "the first matching alert of the round is credited"
        );
    }

    #[test]
    fn quiescent_when_no_alert_can_ever_arrive() {
        let g = Graph::new(
            vec![
                (nid("e"), NodeLabel::activation(Watchpoint::Top).marked_entry()),
                (
                    nid("never"),
                    NodeLabel::activation(Watchpoint::atom("ufo")).marked_goal(),
                ),
            ],
            vec![(nid("e"), nid("never"))],
        )
        .unwrap();
        let (summary, trace) = run_to_end(&g, Scenario::default());
        assert_eq!(summary.outcome, RunOutcome::Quiescent);
        assert_eq!(summary.rounds, 1, "the entry round runs; nothing after");
        assert_eq!(fired_nodes(&trace), vec!["e"]);
    }

    #[test]
    fn delays_defer_activation() {
        let g = Graph::new(
            vec![
                (nid("e"), NodeLabel::activation(Watchpoint::Top).marked_entry()),
                (
                    nid("g"),
                    NodeLabel::activation(Watchpoint::Top).with_delay(750).marked_goal(),
                ),
            ],
            vec![(nid("e"), nid("g"))],
        )
        .unwrap();
        let (summary, trace) = run_to_end(&g, Scenario::default());
        assert_eq!(summary.outcome, RunOutcome::Done);
        assert_eq!(trace[1].fired_at, Timestamp::Millis(750));
    }

    #[test]
    fn a_timed_out_watchpoint_is_withdrawn() {
        let g = Graph::new(
            vec![
                (nid("e"), NodeLabel::activation(Watchpoint::Top).marked_entry()),
                (
                    nid("window"),
                    NodeLabel::activation(Watchpoint::atom("knock"))
                        .with_timeout(Timeout::millis(50))
                        .marked_goal(),
                ),
            ],
            vec![(nid("e"), nid("window"))],
        )
        .unwrap();
        // The knock comes after the 50ms window has closed.
        let scenario = Scenario {
            scheduled: vec![ScheduledAlert {
                at: Timestamp::Millis(100),
                atom: "knock".into(),
                payload: String::new(),
            }],
            reactions: vec![],
        };
        let (summary, trace) = run_to_end(&g, scenario);
        assert_eq!(summary.outcome, RunOutcome::Quiescent);
        assert_eq!(fired_nodes(&trace), vec!["e"]);
    }

    #[test]
    fn firing_beats_expiry_at_the_exact_instant() {
        let g = Graph::new(
            vec![
                (nid("e"), NodeLabel::activation(Watchpoint::Top).marked_entry()),
                (
                    nid("window"),
                    NodeLabel::activation(Watchpoint::atom("knock"))
                        .with_timeout(Timeout::millis(50))
                        .marked_goal(),
                ),
            ],
            vec![(nid("e"), nid("window"))],
        )
        .unwrap();
        let scenario = Scenario {
            scheduled: vec![ScheduledAlert {
                at: Timestamp::Millis(50),
                atom: "knock".into(),
                payload: String::new(),
            }],
            reactions: vec![],
        };
        let (summary, trace) = run_to_end(&g, scenario);
        assert_eq!(summary.outcome, RunOutcome::Done);
        assert_eq!(trace[1].fired_at, Timestamp::Millis(50));
    }

    fn counted_loop(budget: i64) -> Graph {
        Graph::new(
            vec![
                (nid("e"), NodeLabel::activation(Watchpoint::Top).marked_entry()),
                (nid("body"), NodeLabel::activation(Watchpoint::Top)),
                (nid("l"), NodeLabel::loop_count(budget)),
                (nid("x"), NodeLabel::loop_exit()),
                (nid("z"), NodeLabel::activation(Watchpoint::Top).marked_goal()),
            ],
            vec![
                (nid("e"), nid("body")),
                (nid("body"), nid("l")),
                (nid("l"), nid("body")),
                (nid("l"), nid("x")),
                (nid("x"), nid("z")),
            ],
        )
        .unwrap()
    }

    #[test]
    fn a_loop_with_budget_n_runs_its_body_n_plus_one_times() {
        let (summary, trace) = run_to_end(&counted_loop(2), Scenario::default());
        assert_eq!(summary.outcome, RunOutcome::Done);
        assert_eq!(fired_nodes(&trace), vec!["e", "body", "body", "body", "z"]);
    }

    #[test]
    fn effects_dispatch_and_reactions_close_the_feedback_loop() {
        let g = Graph::new(
            vec![
                (nid("e"), NodeLabel::activation(Watchpoint::Top).marked_entry()),
                (
                    nid("probe"),
                    NodeLabel::guarded_effect(Watchpoint::Top, EffectRef::new("scan the lan")),
                ),
                (
                    nid("confirmed"),
                    NodeLabel::activation(Watchpoint::atom("scan_result")).marked_goal(),
                ),
            ],
            vec![(nid("e"), nid("probe")), (nid("probe"), nid("confirmed"))],
        )
        .unwrap();
        let scenario = Scenario {
            scheduled: vec![],
            reactions: vec![Reaction {
                command_contains: "scan".into(),
                delay: DurationMs::new(300),
                atom: "scan_result".into(),
                payload: "5 hosts".into(),
                repeatable: false,
            }],
        };
        let (summary, trace) = run_to_end(&g, scenario);
        assert_eq!(summary.outcome, RunOutcome::Done);
        assert_eq!(trace[1].effect_command.as_deref(), Some("scan the lan"));
        assert_eq!(
            trace[1].dispatch_status,
            Some(crate::env::DispatchStatus::Dispatched)
        );
        assert_eq!(trace[2].fired_at, Timestamp::Millis(300));
        assert_eq!(
            trace[2].cause,
            Cause::Alert { atom: "scan_result".into(), payload: "5 hosts".into() }
        );
    }

    #[derive(Default)]
    struct Recorder {
        records: Vec<SubStepRecord>,
    }

    impl Inspector for Recorder {
        fn sub_step(&mut self, record: &SubStepRecord) {
            self.records.push(record.clone());
        }
    }

    #[test]
    fn every_state_change_shrinks_the_measure_and_keeps_the_partition() {
        let g = counted_loop(3);
        let mut engine =
            Engine::new(&g, EngineConfig::simulated().with_instrumentation()).unwrap();
        let mut env = SimulatedEnvironment::new(Scenario::default());
        engine.init(&mut env);
        let mut previous = engine.measure();
        let mut recorder = Recorder::default();
        let summary = engine
            .run(&mut env, RunLimits::default(), Some(&mut recorder))
            .unwrap();
        assert_eq!(summary.outcome, RunOutcome::Done);
        assert!(!recorder.records.is_empty());
        for record in &recorder.records {
            assert!(record.partition_ok, "partition broke at {record:?}");
            if record.state_changed {
                assert!(
                    record.measure < previous,
                    "sub-step {:?} did not shrink the measure: {:?} -> {:?}",
                    record.step,
                    previous,
                    record.measure
                );
            } else {
                assert_eq!(record.measure, previous);
            }
            previous = record.measure;
        }
    }

    #[test]
    fn snapshot_resume_matches_an_uninterrupted_run() {
        let g = Graph::new(
            vec![
                (nid("e"), NodeLabel::activation(Watchpoint::Top).marked_entry()),
                (nid("m"), NodeLabel::activation(Watchpoint::atom("go"))),
                (nid("g"), NodeLabel::activation(Watchpoint::Top).marked_goal()),
            ],
            vec![(nid("e"), nid("m")), (nid("m"), nid("g"))],
        )
        .unwrap();
        let scenario = Scenario {
            scheduled: vec![ScheduledAlert {
                at: Timestamp::Millis(70),
                atom: "go".into(),
                payload: String::new(),
            }],
            reactions: vec![],
        };

        let (_, uninterrupted) = run_to_end(&g, scenario.clone());

        let mut engine = Engine::new(&g, EngineConfig::simulated()).unwrap();
        let mut env = SimulatedEnvironment::new(scenario.clone());
        let first = engine
            .run(
                &mut env,
                RunLimits { max_rounds: Some(1), max_time: None },
                None,
            )
            .unwrap();
        assert_eq!(first.outcome, RunOutcome::RoundLimit);

        let snapshot = engine.snapshot(Some(env.checkpoint()));
        let mut resumed = Engine::resume(&g, EngineConfig::simulated(), &snapshot).unwrap();
        let mut env2 =
            SimulatedEnvironment::restore(scenario, snapshot.env.clone().unwrap()).unwrap();
        let second = resumed.run(&mut env2, RunLimits::default(), None).unwrap();
        assert_eq!(second.outcome, RunOutcome::Done);
        assert_eq!(second.rounds, 3, "round counter continues across the seam");
        assert_eq!(resumed.state().trace().entries().to_vec(), uninterrupted);
    }

    #[test]
    fn resume_rejects_snapshots_that_do_not_fit() {
        let g = counted_loop(1);
        let mut engine = Engine::new(&g, EngineConfig::simulated()).unwrap();
        let mut env = SimulatedEnvironment::new(Scenario::default());
        engine.init(&mut env);
        let mut snapshot = engine.snapshot(None);
        snapshot.counters.insert(nid("phantom"), 3);
        match Engine::resume(&g, EngineConfig::simulated(), &snapshot) {
            Err(EngineError::BadSnapshot(msg)) => assert!(msg.contains("counter"), "{msg}"),
            Err(other) => panic!("expected BadSnapshot, got {other:?}"),
            Ok(_) => panic!("expected BadSnapshot, got a running engine"),
        }
    }

    #[test]
    fn construction_rejects_invalid_or_uncollapsed_graphs() {
        let no_goal = Graph::new(
            vec![(nid("e"), NodeLabel::activation(Watchpoint::Top).marked_entry())],
            vec![],
        )
        .unwrap();
        assert!(matches!(
            Engine::new(&no_goal, EngineConfig::simulated()),
            Err(EngineError::InvalidGraph(_))
        ));

        let chained_logic = Graph::new(
            vec![
                (nid("e"), NodeLabel::activation(Watchpoint::Top).marked_entry()),
                (nid("g"), NodeLabel::activation(Watchpoint::Top).marked_goal()),
                (nid("j1"), NodeLabel::logic(BoolExpr::Node(nid("e")))),
                (nid("j2"), NodeLabel::logic(BoolExpr::Node(nid("j1")))),
            ],
            vec![(nid("e"), nid("j1")), (nid("j1"), nid("j2")), (nid("j2"), nid("g"))],
        )
        .unwrap();
        assert!(matches!(
            Engine::new(&chained_logic, EngineConfig::simulated()),
            Err(EngineError::NotCollapsed)
        ));
    }

    #[test]
    fn stepping_before_init_is_an_error() {
        let g = counted_loop(1);
        let mut engine = Engine::new(&g, EngineConfig::simulated()).unwrap();
        let mut env = SimulatedEnvironment::new(Scenario::default());
        assert!(matches!(
            engine.step(&mut env, None),
            Err(EngineError::NotInitialized)
        ));
    }

    #[test]
    fn path_weights_count_nodes_per_path() {
        // diamond: a -> b, a -> c, b -> d, c -> d
        let g = Graph::new(
            vec![
                (nid("a"), NodeLabel::activation(Watchpoint::Top).marked_entry()),
                (nid("b"), NodeLabel::activation(Watchpoint::Top)),
                (nid("c"), NodeLabel::activation(Watchpoint::Top)),
                (nid("d"), NodeLabel::activation(Watchpoint::Top).marked_goal()),
            ],
            vec![
                (nid("a"), nid("b")),
                (nid("a"), nid("c")),
                (nid("b"), nid("d")),
                (nid("c"), nid("d")),
            ],
        )
        .unwrap();
        let w = path_weights(&g, &BTreeSet::new());
        assert_eq!(w[&nid("d")], 1);
        assert_eq!(w[&nid("b")], 2, "one path of two nodes");
        // Two paths a-b-d and a-c-d, three nodes each.
        assert_eq!(w[&nid("a")], 6);
    }
}
