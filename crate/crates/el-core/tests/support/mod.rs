//! Shared machinery for the acceptance suite: a deterministic RNG, a
//! builder that mass-produces structurally valid graphs, random
//! scenarios to run them against, and an environment that feeds a run
//! whatever telemetry it is currently waiting for.
//!
//! Everything here is seeded — two processes constructing with the same
//! seed get the same graph, the same scenario, and the same run.

use std::collections::VecDeque;

use el_core::env::{Alert, DispatchStatus, Environment};
use el_core::graph::{BoolExpr, EffectRef, Graph, NodeId, NodeLabel, Watchpoint};
use el_core::scenario::{Reaction, Scenario, ScheduledAlert};
use el_core::time::{DurationMs, Timeout, Timestamp};

/// SplitMix64. Small, fast, and identical on every platform, which is
/// all a test-corpus generator needs.
pub struct Rng(u64);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform-ish value in `0..n`. The modulo bias is irrelevant at
    /// test-corpus scale.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        self.next_u64() % n
    }

    pub fn range(&mut self, lo: u64, hi_inclusive: u64) -> u64 {
        lo + self.below(hi_inclusive - lo + 1)
    }

    pub fn chance(&mut self, percent: u64) -> bool {
        self.below(100) < percent
    }

    pub fn pick<'a, T>(&mut self, xs: &'a [T]) -> &'a T {
        &xs[self.below(xs.len() as u64) as usize]
    }
}

/// Knobs for [`random_graph`]. The defaults produce the widest shape
/// variety; individual criteria turn features off when they would make
/// the property under test vacuous or unreachable.
pub struct GenOptions {
    /// Rough size to aim for. Actual node count lands in
    /// `[3, target_nodes + 4]` because blocks are added whole.
    pub target_nodes: usize,
    /// Allow loop blocks at all.
    pub loops: bool,
    /// Allow `-1` (run forever) loop budgets. Only consulted when
    /// `loops` is set.
    pub infinite_loops: bool,
    /// Allow finite timeouts, i.e. nodes that can expire unserved.
    pub finite_timeouts: bool,
    /// Allow non-zero activation delays.
    pub delays: bool,
}

impl Default for GenOptions {
    fn default() -> Self {
        GenOptions {
            target_nodes: 20,
            loops: true,
            infinite_loops: false,
            finite_timeouts: true,
            delays: true,
        }
    }
}

/// A generated graph plus the bookkeeping the criteria need to reason
/// about it.
pub struct Generated {
    pub graph: Graph,
    /// Every atom some watchpoint listens for, in creation order.
    pub atoms: Vec<String>,
    /// Every non-empty effect command in the graph.
    pub commands: Vec<String>,
    /// Sum of non-negative loop budgets (a `-1` budget contributes 0).
    pub loop_budget_sum: i64,
}

struct Builder {
    nodes: Vec<(NodeId, NodeLabel)>,
    edges: Vec<(NodeId, NodeId)>,
    atoms: Vec<String>,
    commands: Vec<String>,
    loop_budget_sum: i64,
    seq: usize,
}

impl Builder {
    fn fresh(&mut self, prefix: &str) -> NodeId {
        self.seq += 1;
        NodeId::new(format!("{prefix}{}", self.seq))
    }

    fn push(&mut self, id: NodeId, label: NodeLabel) -> NodeId {
        self.nodes.push((id.clone(), label));
        id
    }

    fn edge(&mut self, from: &NodeId, to: &NodeId) {
        self.edges.push((from.clone(), to.clone()));
    }

    fn len(&self) -> usize {
        self.nodes.len()
    }

    /// A watchpoint for a fresh node: sometimes always-on, sometimes a
    /// previously used atom (so alerts fan out), sometimes a new one.
    fn watchpoint(&mut self, rng: &mut Rng) -> Watchpoint {
        if rng.chance(30) || self.atoms.is_empty() {
            if rng.chance(40) || self.atoms.is_empty() {
                let atom = format!("sig{}", self.atoms.len());
                self.atoms.push(atom.clone());
                Watchpoint::atom(atom)
            } else {
                Watchpoint::Top
            }
        } else {
            Watchpoint::atom(rng.pick(&self.atoms).clone())
        }
    }

    fn decorate(&mut self, rng: &mut Rng, label: NodeLabel, opt: &GenOptions) -> NodeLabel {
        let mut label = label;
        if opt.delays && rng.chance(25) {
            label = label.with_delay(rng.range(1, 8) * 25);
        }
        if opt.finite_timeouts && rng.chance(20) {
            label = label.with_timeout(Timeout::millis(rng.range(1, 20) * 50));
        }
        label
    }

    /// A plain watchpoint node, sometimes carrying an effect command.
    fn step_node(&mut self, rng: &mut Rng, opt: &GenOptions) -> NodeId {
        let w = self.watchpoint(rng);
        let label = if rng.chance(35) {
            let cmd = format!("cmd-{} --step {}", self.seq, self.commands.len());
            self.commands.push(cmd.clone());
            NodeLabel::guarded_effect(w, EffectRef::new(cmd))
        } else {
            NodeLabel::activation(w)
        };
        let label = self.decorate(rng, label, opt);
        let id = self.fresh("n");
        self.push(id, label)
    }
}

/// Builds a random graph that satisfies every structural rule by
/// construction: grow a frontier of open tips with chain, fan-out, join,
/// and loop blocks, then funnel every remaining tip into a goal.
pub fn random_graph(rng: &mut Rng, opt: &GenOptions) -> Generated {
    let mut b = Builder {
        nodes: Vec::new(),
        edges: Vec::new(),
        atoms: Vec::new(),
        commands: Vec::new(),
        loop_budget_sum: 0,
        seq: 0,
    };

    let entry = b.push(
        NodeId::new("entry"),
        NodeLabel::activation(Watchpoint::Top).marked_entry(),
    );
    let mut frontier: Vec<NodeId> = vec![entry];

    // Every graph gets at least one block so the minimum shape is
    // entry -> step -> goal.
    let budget = opt.target_nodes.saturating_sub(2).max(2);
    while b.len() < budget {
        let roll = rng.below(100);
        if roll < 45 || frontier.len() >= 6 {
            // Chain: extend one tip by a single step.
            let at = rng.below(frontier.len() as u64) as usize;
            let n = b.step_node(rng, opt);
            b.edge(&frontier[at].clone(), &n);
            frontier[at] = n;
        } else if roll < 65 {
            // Fan-out: one tip grows two parallel children.
            let at = rng.below(frontier.len() as u64) as usize;
            let tip = frontier.swap_remove(at);
            for _ in 0..2 {
                let n = b.step_node(rng, opt);
                b.edge(&tip, &n);
                frontier.push(n);
            }
        } else if roll < 85 && frontier.len() >= 2 {
            // Join: two tips meet in a logic node, which feeds one
            // continuation step.
            let x = frontier.swap_remove(rng.below(frontier.len() as u64) as usize);
            let y = frontier.swap_remove(rng.below(frontier.len() as u64) as usize);
            let cond = if rng.chance(50) {
                BoolExpr::And(vec![BoolExpr::Node(x.clone()), BoolExpr::Node(y.clone())])
            } else {
                BoolExpr::Or(vec![BoolExpr::Node(x.clone()), BoolExpr::Node(y.clone())])
            };
            let j = b.fresh("j");
            b.push(j.clone(), NodeLabel::logic(cond));
            b.edge(&x, &j);
            b.edge(&y, &j);
            let n = b.step_node(rng, opt);
            b.edge(&j, &n);
            frontier.push(n);
        } else if opt.loops {
            // Loop: consume one tip as the entrance of a counted loop.
            let at = rng.below(frontier.len() as u64) as usize;
            let entrance = frontier.swap_remove(at);
            let initial = if opt.infinite_loops && rng.chance(25) {
                -1
            } else {
                rng.range(1, 3) as i64
            };
            b.loop_budget_sum += initial.max(0);

            let l = b.fresh("l");
            b.push(l.clone(), NodeLabel::loop_count(initial));
            let exit = b.fresh("x");
            b.push(exit.clone(), NodeLabel::loop_exit());

            // Body: first, then 0..=2 more steps, then back to the count.
            let first = b.step_node(rng, opt);
            let mut last = first.clone();
            for _ in 0..rng.below(3) {
                let n = b.step_node(rng, opt);
                b.edge(&last, &n);
                last = n;
            }
            b.edge(&entrance, &first);
            b.edge(&last, &l);
            b.edge(&l, &first);
            b.edge(&l, &exit);

            // Sometimes an escape hatch: a break node beside the body.
            if rng.chance(35) {
                let atom = format!("brk{}", b.atoms.len());
                b.atoms.push(atom.clone());
                let bk = b.fresh("b");
                b.push(
                    bk.clone(),
                    NodeLabel::activation(Watchpoint::atom(atom)).marked_break(),
                );
                b.edge(&entrance, &bk);
                b.edge(&bk, &exit);
            }
            frontier.push(exit);
        } else {
            // Loops disabled; fall back to a chain step.
            let at = rng.below(frontier.len() as u64) as usize;
            let n = b.step_node(rng, opt);
            b.edge(&frontier[at].clone(), &n);
            frontier[at] = n;
        }
    }

    // Funnel: everything still open joins into the goal.
    let goal_parent = if frontier.len() == 1 {
        frontier.pop().unwrap()
    } else {
        let cond = BoolExpr::And(frontier.iter().map(|n| BoolExpr::Node(n.clone())).collect());
        let j = b.fresh("j");
        b.push(j.clone(), NodeLabel::logic(cond));
        for tip in &frontier {
            b.edge(tip, &j);
        }
        j
    };
    let goal = b.push(
        NodeId::new("goal"),
        NodeLabel::activation(Watchpoint::Top).marked_goal(),
    );
    b.edge(&goal_parent, &goal);

    let graph = Graph::new(b.nodes, b.edges).expect("generated graphs are well-formed");
    Generated {
        graph,
        atoms: b.atoms,
        commands: b.commands,
        loop_budget_sum: b.loop_budget_sum,
    }
}

/// A random scenario aimed at (but not guaranteed to finish) the given
/// graph: scheduled alerts drawn from its atom universe plus some noise,
/// and reactions keyed on its effect commands.
pub fn random_scenario(rng: &mut Rng, gen: &Generated) -> Scenario {
    let mut atoms = gen.atoms.clone();
    atoms.push("noise".to_string());

    let mut scheduled = Vec::new();
    for i in 0..rng.below(13) {
        scheduled.push(ScheduledAlert {
            at: Timestamp::Millis(rng.below(40) * 25),
            atom: rng.pick(&atoms).clone(),
            payload: format!("payload {i}"),
        });
    }
    scheduled.sort_by_key(|a| a.at);

    let mut reactions = Vec::new();
    if !gen.commands.is_empty() {
        for _ in 0..rng.below(4) {
            reactions.push(Reaction {
                command_contains: rng.pick(&gen.commands).clone(),
                delay: DurationMs::new(rng.below(8) * 25),
                atom: rng.pick(&atoms).clone(),
                payload: "reaction".to_string(),
                repeatable: rng.chance(30),
            });
        }
    }

    Scenario { scheduled, reactions }
}

/// An environment for reachability runs: the test inspects the engine
/// between rounds and calls [`ResponsiveEnv::feed`] with the atoms the
/// run is waiting for, so every watchpoint is eventually served.
pub struct ResponsiveEnv {
    now: Timestamp,
    queue: VecDeque<Alert>,
}

impl ResponsiveEnv {
    pub fn new() -> Self {
        ResponsiveEnv {
            now: Timestamp::ZERO,
            queue: VecDeque::new(),
        }
    }

    pub fn feed(&mut self, atom: &str) {
        self.queue
            .push_back(Alert::new(atom, format!("fed {atom}"), self.now));
    }
}

impl Environment for ResponsiveEnv {
    fn get_alerts(&mut self) -> Vec<Alert> {
        let due: Vec<Alert> = self
            .queue
            .iter()
            .filter(|a| a.emitted_at <= self.now)
            .cloned()
            .collect();
        self.queue.retain(|a| a.emitted_at > self.now);
        due
    }

    fn get_time(&mut self) -> Timestamp {
        self.now
    }

    fn execute(&mut self, _command: &str, _node: &NodeId) -> DispatchStatus {
        DispatchStatus::Dispatched
    }

    fn next_event_time(&self) -> Option<Timestamp> {
        self.queue.front().map(|a| a.emitted_at)
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
