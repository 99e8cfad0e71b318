//! Explicit-state reference interpreter.
//!
//! This module re-implements the round semantics in the most literal
//! style possible, for use as a test oracle against the optimized
//! [`crate::engine`]. It shares only the data vocabulary (graph, alerts,
//! trace entries, outcomes) — every semantic decision is re-derived
//! here, differently:
//!
//! * the *inactive* set is materialized instead of implicit, and a
//!   totality + disjointness check runs after every sub-step;
//! * loop membership is recomputed from per-node path queries each time
//!   a loop count fires, instead of being cached at construction;
//! * sets are rebuilt by scanning rather than maintained incrementally.
//!
//! If the engine and this interpreter ever disagree on a trace or a
//! final state, one of them has a bug; the differential test suite
//! exists to make that disagreement loud.
//!
//! [`enumerate_outcomes`] additionally explores *every* possible
//! delivery order of a pool of alerts, recording which deliveries reach
//! the goal and which leave the run stuck — small graphs only.

use std::collections::{BTreeMap, BTreeSet};

use crate::engine::{RunLimits, RunOutcome};
use crate::env::{Alert, DispatchStatus, Environment};
use crate::graph::{BoolExpr, Graph, NodeId, NodeKind, Watchpoint};
use crate::time::Timestamp;
use crate::trace::{Cause, TraceEntry};

/// The four-way node account: every node of the graph is in exactly one
/// of delayed / active / fired / inactive at every observation point.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ReferenceState {
    pub delayed: BTreeMap<NodeId, Timestamp>,
    pub active: BTreeMap<NodeId, Timestamp>,
    pub fired: BTreeSet<NodeId>,
    pub inactive: BTreeSet<NodeId>,
    pub counters: BTreeMap<NodeId, i64>,
    pub trace: Vec<TraceEntry>,
}

impl ReferenceState {
    /// The state at the beginning of a run started at `start`.
    pub fn initial(g: &Graph, start: Timestamp) -> Self {
        let mut st = ReferenceState {
            delayed: BTreeMap::new(),
            active: BTreeMap::new(),
            fired: BTreeSet::new(),
            inactive: g.node_ids().cloned().collect(),
            counters: BTreeMap::new(),
            trace: Vec::new(),
        };
        for entry in g.entry_nodes() {
            let expires = start.plus_timeout(g.timeout(&entry).expect("known node"));
            st.inactive.remove(&entry);
            st.active.insert(entry, expires);
        }
        for l in g.loop_count_nodes() {
            let initial = g
                .label(&l)
                .expect("known node")
                .loop_count_initial()
                .expect("loop count node");
            st.counters.insert(l, initial);
        }
        st.assert_accounted(g);
        st
    }

    pub fn goal_reached(&self, g: &Graph) -> bool {
        g.goal_nodes().iter().any(|n| self.fired.contains(n))
    }

    /// Panics unless every node sits in exactly one of the four sets.
    /// This is the oracle's own health check, run after every sub-step.
    fn assert_accounted(&self, g: &Graph) {
        for n in g.node_ids() {
            let places = usize::from(self.delayed.contains_key(n))
                + usize::from(self.active.contains_key(n))
                + usize::from(self.fired.contains(n))
                + usize::from(self.inactive.contains(n));
            assert!(
                places == 1,
                "node {n} is accounted for {places} times (delayed={} active={} fired={} inactive={})",
                self.delayed.contains_key(n),
                self.active.contains_key(n),
                self.fired.contains(n),
                self.inactive.contains(n),
            );
        }
    }

    fn make_inactive(&mut self, n: &NodeId) {
        self.delayed.remove(n);
        self.active.remove(n);
        self.fired.remove(n);
        self.inactive.insert(n.clone());
    }
}

fn condition_holds(expr: &BoolExpr, fired: &BTreeSet<NodeId>) -> bool {
    match expr {
        BoolExpr::Node(n) => fired.contains(n),
        BoolExpr::And(parts) => parts.iter().all(|p| condition_holds(p, fired)),
        BoolExpr::Or(parts) => parts.iter().any(|p| condition_holds(p, fired)),
    }
}

/// Is there a directed path from `from` to `to` that never *continues
/// out of* `blocked`? Arriving at `blocked` is allowed (the path may end
/// there), and starting at it is allowed; passing through it is not.
fn path_exists(g: &Graph, from: &NodeId, to: &NodeId, blocked: &NodeId) -> bool {
    if from == to {
        return true;
    }
    let mut seen: BTreeSet<NodeId> = BTreeSet::new();
    let mut pending = vec![from.clone()];
    while let Some(n) = pending.pop() {
        if n == *blocked && n != *from {
            continue;
        }
        for c in g.children(&n).expect("known node") {
            if c == to {
                return true;
            }
            if seen.insert(c.clone()) {
                pending.push(c.clone());
            }
        }
    }
    false
}

/// The two children of a loop count: (first body node, loop exit).
fn split_loop_children(g: &Graph, l: &NodeId) -> (NodeId, NodeId) {
    let children = g.children(l).expect("known node");
    assert_eq!(children.len(), 2, "loop count {l} must have two children");
    let exit = children
        .iter()
        .find(|c| g.label(c).expect("known node").kind() == NodeKind::LoopExit)
        .expect("one child is the loop exit")
        .clone();
    let first = children.iter().find(|c| **c != exit).expect("two children").clone();
    (first, exit)
}

/// The loop body for loop count `l`: nodes (other than `l`) lying on a
/// path from the first body node to `l` that stays inside the loop.
fn body_nodes(g: &Graph, first: &NodeId, l: &NodeId) -> BTreeSet<NodeId> {
    g.node_ids()
        .filter(|n| *n != l)
        .filter(|n| path_exists(g, first, n, l) && path_exists(g, n, l, first))
        .cloned()
        .collect()
}

fn schedule_child(g: &Graph, st: &mut ReferenceState, c: &NodeId, now: Timestamp) {
    assert!(st.inactive.remove(c), "a fresh child must have been inactive");
    let delay = g.delay(c).expect("known node");
    if delay.is_zero() {
        let expires = now.plus_timeout(g.timeout(c).expect("known node"));
        st.active.insert(c.clone(), expires);
    } else {
        st.delayed.insert(c.clone(), now.plus_delay(delay));
    }
}

/// Fires `who` (all currently active): schedules unseen children, moves
/// the fired nodes out of the active set, dispatches effects, records
/// watchpoint firings.
fn fire(
    g: &Graph,
    st: &mut ReferenceState,
    who: &BTreeSet<NodeId>,
    alerts: &[Alert],
    now: Timestamp,
    env: &mut dyn Environment,
) {
    let mut fresh: BTreeSet<NodeId> = BTreeSet::new();
    for n in who {
        for c in g.children(n).expect("known node") {
            let seen = st.delayed.contains_key(c)
                || st.active.contains_key(c)
                || st.fired.contains(c);
            if !seen {
                fresh.insert(c.clone());
            }
        }
    }
    for c in &fresh {
        schedule_child(g, st, c, now);
    }

    for n in who {
        assert!(st.active.remove(n).is_some(), "fired nodes come from the active set");
        st.fired.insert(n.clone());
    }

    for n in who {
        let label = g.label(n).expect("known node");
        if !label.is_watchpoint_node() || label.is_break() {
            continue;
        }
        let watchpoint = label.watchpoint().expect("watchpoint node");
        let cause = if watchpoint.is_top() {
            Cause::Top
        } else {
            let hit = alerts
                .iter()
                .find(|a| watchpoint.matches(&a.atom))
                .expect("an atom node fires only on a matching alert");
            Cause::Alert { atom: hit.atom.clone(), payload: hit.payload.clone() }
        };
        let mut effect_command = None;
        let mut dispatch_status = None;
        if let Some(effect) = label.effect() {
            if !effect.is_noop() {
                effect_command = Some(effect.command().to_string());
                dispatch_status = Some(env.execute(effect.command(), n));
            }
        }
        st.trace.push(TraceEntry {
            node: n.clone(),
            fired_at: now,
            cause,
            effect_command,
            dispatch_status,
        });
    }
}

/// One complete round at time `now` with the given due alerts.
pub fn reference_round(
    g: &Graph,
    st: &mut ReferenceState,
    alerts: &[Alert],
    now: Timestamp,
    env: &mut dyn Environment,
) {
    // Delayed nodes whose delay has elapsed become active.
    let elapsed: Vec<NodeId> = st
        .delayed
        .iter()
        .filter(|(_, at)| **at <= now)
        .map(|(n, _)| n.clone())
        .collect();
    for n in elapsed {
        st.delayed.remove(&n);
        let expires = now.plus_timeout(g.timeout(&n).expect("known node"));
        st.active.insert(n, expires);
    }
    st.assert_accounted(g);

    // Who triggers this round.
    let mut triggered: BTreeSet<NodeId> = BTreeSet::new();
    for n in st.active.keys() {
        let label = g.label(n).expect("known node");
        let hot = match label.kind() {
            NodeKind::Logic => condition_holds(label.condition().expect("logic"), &st.fired),
            NodeKind::LoopCount | NodeKind::LoopExit => false,
            NodeKind::Activation | NodeKind::GuardedEffect => {
                let w = label.watchpoint().expect("watchpoint node");
                w.is_top() || alerts.iter().any(|a| w.matches(&a.atom))
            }
        };
        if hot {
            triggered.insert(n.clone());
        }
    }
    fire(g, st, &triggered, alerts, now, env);
    st.assert_accounted(g);

    // Loop counts.
    let hot_counts: Vec<NodeId> = st
        .active
        .keys()
        .filter(|n| g.label(n).expect("known node").kind() == NodeKind::LoopCount)
        .cloned()
        .collect();
    for l in hot_counts {
        let (first, exit) = split_loop_children(g, &l);
        for n in body_nodes(g, &first, &l) {
            st.make_inactive(&n);
        }
        let budget = *st.counters.get(&l).expect("counter for every loop count");
        if budget == 0 {
            st.inactive.remove(&exit);
            st.active.insert(exit, Timestamp::Infinity);
            st.active.remove(&l);
            st.fired.insert(l);
        } else {
            if budget > 0 {
                st.counters.insert(l.clone(), budget - 1);
            }
            schedule_child(g, st, &first, now);
            st.active.remove(&l);
            st.inactive.insert(l);
        }
    }
    st.assert_accounted(g);

    // Loop exits.
    let hot_exits: BTreeSet<NodeId> = st
        .active
        .keys()
        .filter(|n| g.label(n).expect("known node").kind() == NodeKind::LoopExit)
        .cloned()
        .collect();
    for x in &hot_exits {
        let l = g
            .parents(x)
            .expect("known node")
            .iter()
            .find(|p| g.label(p).expect("known node").kind() == NodeKind::LoopCount)
            .expect("every loop exit belongs to a loop count")
            .clone();
        let (first, _) = split_loop_children(g, &l);
        for n in body_nodes(g, &first, &l) {
            st.make_inactive(&n);
        }
        st.make_inactive(&l);
        for p in g.parents(x).expect("known node") {
            if g.label(p).expect("known node").is_break() {
                st.make_inactive(p);
            }
        }
    }
    fire(g, st, &hot_exits, &[], now, env);
    st.assert_accounted(g);

    // Garbage collection: expired actives are withdrawn.
    let expired: Vec<NodeId> = st
        .active
        .iter()
        .filter(|(_, expires)| **expires <= now)
        .map(|(n, _)| n.clone())
        .collect();
    for n in expired {
        st.active.remove(&n);
        st.inactive.insert(n);
    }
    st.assert_accounted(g);
}

/// Could a round at `now` change anything, given the next pending alert
/// instant (if known)?
pub fn round_has_work(
    g: &Graph,
    st: &ReferenceState,
    next_alert: Option<Timestamp>,
    now: Timestamp,
) -> bool {
    if next_alert.is_some_and(|t| t <= now) {
        return true;
    }
    if st.delayed.values().any(|at| *at <= now) {
        return true;
    }
    st.active.iter().any(|(n, expires)| {
        if *expires <= now {
            return true;
        }
        let label = g.label(n).expect("known node");
        match label.kind() {
            NodeKind::Logic => condition_holds(label.condition().expect("logic"), &st.fired),
            NodeKind::LoopCount | NodeKind::LoopExit => true,
            NodeKind::Activation | NodeKind::GuardedEffect => {
                label.watchpoint().expect("watchpoint node").is_top()
            }
        }
    })
}

/// Result of [`reference_run`].
#[derive(Clone, Debug)]
pub struct ReferenceRun {
    pub outcome: RunOutcome,
    pub rounds: u64,
    pub final_time: Timestamp,
    pub state: ReferenceState,
}

/// Drives a full run against `env` with the same clock policy as the
/// engine: run a round whenever one has work at the current instant,
/// otherwise jump to the earliest instant one will, and stop when the
/// goal fires, a limit trips, or nothing can ever happen again.
///
/// Environments with open-ended alert sources (operator terminals) are
/// outside this oracle's scope: a source that is not exhausted but has
/// no computable next event ends the run as quiescent rather than
/// waiting in real time.
pub fn reference_run(g: &Graph, env: &mut dyn Environment, limits: RunLimits) -> ReferenceRun {
    let start = env.get_time();
    let mut st = ReferenceState::initial(g, start);
    let mut rounds: u64 = 0;
    let mut last_time = start;

    let over_time = |t: Timestamp| match limits.max_time {
        None => false,
        Some(budget) => t.since(start).map_or(true, |elapsed| elapsed > budget.millis()),
    };

    let outcome = loop {
        if st.goal_reached(g) {
            break RunOutcome::Done;
        }
        if limits.max_rounds.is_some_and(|m| rounds >= m) {
            break RunOutcome::RoundLimit;
        }

        let now = env.get_time();
        if !round_has_work(g, &st, env.next_event_time(), now) {
            // Earliest future instant with something to do.
            let mut horizon: Option<Timestamp> = None;
            let mut candidates: Vec<Timestamp> = Vec::new();
            if let Some(t) = env.next_event_time() {
                candidates.push(t);
            }
            candidates.extend(st.delayed.values().copied());
            candidates.extend(st.active.values().copied());
            for t in candidates {
                if t.is_finite() && t > now && horizon.map_or(true, |h| t < h) {
                    horizon = Some(t);
                }
            }
            match horizon {
                Some(t) => {
                    if over_time(t) {
                        break RunOutcome::RoundLimit;
                    }
                    env.advance_to(t);
                    continue;
                }
                None => break RunOutcome::Quiescent,
            }
        }
        if over_time(now) {
            break RunOutcome::RoundLimit;
        }

        let alerts = env.get_alerts();
        let now = env.get_time();
        reference_round(g, &mut st, &alerts, now, env);
        rounds += 1;
        last_time = now;
    };

    ReferenceRun { outcome, rounds, final_time: last_time, state: st }
}

/// Atoms some watchpoint would see if delivered at `now`: those of
/// active nodes, plus delayed nodes whose delay elapses by `now` (they
/// activate at the top of the round, before triggering).
fn listening_atoms(g: &Graph, st: &ReferenceState, now: Timestamp) -> BTreeSet<String> {
    let due_delayed = st.delayed.iter().filter(|(_, at)| **at <= now).map(|(n, _)| n);
    st.active
        .keys()
        .chain(due_delayed)
        .filter_map(|n| match g.label(n).expect("known node").watchpoint() {
            Some(Watchpoint::Atom(s)) => Some(s.clone()),
            _ => None,
        })
        .collect()
}

/// An environment that accepts every command and produces nothing.
struct NullEnv;

impl Environment for NullEnv {
    fn get_alerts(&mut self) -> Vec<Alert> {
        Vec::new()
    }
    fn get_time(&mut self) -> Timestamp {
        Timestamp::ZERO
    }
    fn execute(&mut self, _command: &str, _node: &NodeId) -> DispatchStatus {
        DispatchStatus::Dispatched
    }
    fn next_event_time(&self) -> Option<Timestamp> {
        None
    }
    fn advance_to(&mut self, _t: Timestamp) {}
    fn is_exhausted(&self) -> bool {
        true
    }
}

/// Exploration bounds for [`enumerate_outcomes`].
#[derive(Clone, Copy, Debug)]
pub struct EnumerationBounds {
    /// Rounds along any single path.
    pub max_rounds: u64,
    /// Distinct (state, remaining-pool) pairs explored in total.
    pub max_states: usize,
}

impl Default for EnumerationBounds {
    fn default() -> Self {
        EnumerationBounds { max_rounds: 24, max_states: 50_000 }
    }
}

/// Everything [`enumerate_outcomes`] found.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Enumeration {
    /// Each element is (alerts delivered along the path, goal reached).
    /// An entry with `false` is a run the environment can strand by
    /// never delivering anything further.
    pub outcomes: BTreeSet<(BTreeSet<String>, bool)>,
    pub goal_reachable: bool,
    /// False when a bound was hit; the outcome set is then a lower bound.
    pub complete: bool,
    pub states_explored: usize,
}

/// Explores every order and grouping in which the atoms of `pool` (each
/// deliverable at most once) can be handed to the graph, recording which
/// delivery sets reach the goal and which can leave the run stuck.
///
/// An atom is only ever delivered while some currently-listening
/// watchpoint matches it: delivering into the void changes nothing
/// except spending the alert, so every behaviour of such a world is
/// already covered by the world that withholds the alert. Rounds tick
/// at one millisecond each, so delay/timeout behaviour is abstract
/// here; use [`reference_run`] for faithful timing.
pub fn enumerate_outcomes(g: &Graph, pool: &[&str], bounds: EnumerationBounds) -> Enumeration {
    assert!(pool.len() <= 16, "enumeration is for small alert pools");

    type Key = (
        Vec<(NodeId, Timestamp)>,
        Vec<(NodeId, Timestamp)>,
        Vec<NodeId>,
        Vec<(NodeId, i64)>,
        Vec<String>,
    );

    fn key_of(st: &ReferenceState, remaining: &[String]) -> Key {
        (
            st.delayed.iter().map(|(n, t)| (n.clone(), *t)).collect(),
            st.active.iter().map(|(n, t)| (n.clone(), *t)).collect(),
            st.fired.iter().cloned().collect(),
            st.counters.iter().map(|(n, c)| (n.clone(), *c)).collect(),
            remaining.to_vec(),
        )
    }

    struct Search<'g> {
        g: &'g Graph,
        bounds: EnumerationBounds,
        visited: BTreeSet<Key>,
        result: Enumeration,
    }

    impl Search<'_> {
        fn explore(
            &mut self,
            st: &ReferenceState,
            remaining: &[String],
            delivered: &BTreeSet<String>,
            round: u64,
        ) {
            if self.result.states_explored >= self.bounds.max_states {
                self.result.complete = false;
                return;
            }
            if !self.visited.insert(key_of(st, remaining)) {
                return;
            }
            self.result.states_explored += 1;

            if st.goal_reached(self.g) {
                self.result.outcomes.insert((delivered.clone(), true));
                self.result.goal_reachable = true;
                return;
            }
            if round >= self.bounds.max_rounds {
                self.result.complete = false;
                return;
            }

            let now = Timestamp::Millis(round);
            let internal = round_has_work(self.g, st, None, now);
            if !internal {
                // The environment may simply stop here.
                self.result.outcomes.insert((delivered.clone(), false));
            }

            let listening = listening_atoms(self.g, st, now);
            let eligible: Vec<usize> = (0..remaining.len())
                .filter(|i| listening.contains(&remaining[*i]))
                .collect();
            let choices = 1u32 << eligible.len();
            for mask in 0..choices {
                if mask == 0 && !internal {
                    continue; // an empty round would change nothing
                }
                let chosen: BTreeSet<usize> = eligible
                    .iter()
                    .enumerate()
                    .filter(|(bit, _)| mask & (1 << bit) != 0)
                    .map(|(_, i)| *i)
                    .collect();
                let mut alerts = Vec::new();
                let mut rest = Vec::new();
                let mut now_delivered = delivered.clone();
                for (i, atom) in remaining.iter().enumerate() {
                    if chosen.contains(&i) {
                        alerts.push(Alert::new(atom.clone(), "", now));
                        now_delivered.insert(atom.clone());
                    } else {
                        rest.push(atom.clone());
                    }
                }
                let mut next = st.clone();
                reference_round(self.g, &mut next, &alerts, now, &mut NullEnv);
                self.explore(&next, &rest, &now_delivered, round + 1);
            }
        }
    }

    let mut search = Search {
        g,
        bounds,
        visited: BTreeSet::new(),
        result: Enumeration {
            outcomes: BTreeSet::new(),
            goal_reachable: false,
            complete: true,
            states_explored: 0,
        },
    };
    let initial = ReferenceState::initial(g, Timestamp::ZERO);
    let pool: Vec<String> = pool.iter().map(|s| s.to_string()).collect();
    search.explore(&initial, &pool, &BTreeSet::new(), 0);
    search.result
}
