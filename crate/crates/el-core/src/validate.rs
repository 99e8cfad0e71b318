//! Structural validation.
//!
//! [`validate`] checks a syntactically well-formed graph against the
//! eight semantic rules the engine relies on, and reports two classes of
//! findings:
//!
//! * **Violations** make the graph unrunnable; the engine refuses input
//!   with any of them. Each carries the number of the rule it breaks:
//!
//!   1. at least one entry node and at least one goal node exist;
//!   2. loop members and break nodes are never entries or goals;
//!   3. every loop count node has exactly two children — the loop's
//!      first node and its exit — the first node has exactly one parent
//!      besides the loop count (the loop entrance), and the counter
//!      value is positive or `-1`;
//!   4. a break node hangs directly between its loop's entrance and
//!      exit, and nothing else feeds an exit besides its loop count;
//!   5. no other child of the loop entrance can reach the loop's exit;
//!   6. a logic node's condition is non-vacuous and mentions only
//!      parents of that node;
//!   7. every loop exit belongs to exactly one loop count;
//!   8. loops neither nest nor overlap, and the only cycles in the graph
//!      run through loop-back edges.
//!
//! * **Warnings** flag shapes that execute fine but usually indicate a
//!   modeling slip: an entry node with parents, or an effect node placed
//!   outside the usual activation/effect pairing.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::graph::{Graph, NodeId, NodeKind};
use crate::loops::{internal_nodes, loop_children, LoopShapeIssue};

/// A broken rule, with enough context to point at the offending nodes.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Violation {
    NoEntryNode,
    NoGoalNode,
    LoopMemberMarkedEntry { node: NodeId, loop_count: NodeId },
    LoopMemberMarkedGoal { node: NodeId, loop_count: NodeId },
    LoopChildCount { loop_count: NodeId, found: usize },
    LoopWithoutExitChild { loop_count: NodeId },
    LoopWithTwoExitChildren { loop_count: NodeId },
    FirstNodeParentCount { loop_count: NodeId, first_node: NodeId, found: usize },
    BadLoopCountValue { loop_count: NodeId, value: i64 },
    BreakParentNotEntrance { break_node: NodeId, loop_count: NodeId },
    BreakChildNotExit { break_node: NodeId, loop_count: NodeId },
    ExitParentNotBreak { exit: NodeId, node: NodeId },
    BreakWithoutLoop { node: NodeId },
    LoopBypassReachesExit { entrance: NodeId, child: NodeId, exit: NodeId },
    ConditionLeafNotParent { logic: NodeId, leaf: NodeId },
    VacuousCondition { logic: NodeId },
    ExitWithoutLoopCount { exit: NodeId },
    ExitSharedByLoopCounts { exit: NodeId, loop_counts: Vec<NodeId> },
    OverlappingLoops { a: NodeId, b: NodeId },
    CycleOutsideLoops { witness: Vec<NodeId> },
}

impl Violation {
    /// Which of the eight structural rules this violation breaks.
    pub fn rule(&self) -> u8 {
        use Violation::*;
        match self {
            NoEntryNode | NoGoalNode => 1,
            LoopMemberMarkedEntry { .. } | LoopMemberMarkedGoal { .. } => 2,
            LoopChildCount { .. }
            | LoopWithoutExitChild { .. }
            | LoopWithTwoExitChildren { .. }
            | FirstNodeParentCount { .. }
            | BadLoopCountValue { .. } => 3,
            BreakParentNotEntrance { .. }
            | BreakChildNotExit { .. }
            | ExitParentNotBreak { .. }
            | BreakWithoutLoop { .. } => 4,
            LoopBypassReachesExit { .. } => 5,
            ConditionLeafNotParent { .. } | VacuousCondition { .. } => 6,
            ExitWithoutLoopCount { .. } | ExitSharedByLoopCounts { .. } => 7,
            OverlappingLoops { .. } | CycleOutsideLoops { .. } => 8,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        write!(f, "rule {}: ", self.rule())?;
        match self {
            NoEntryNode => write!(f, "graph has no entry node"),
            NoGoalNode => write!(f, "graph has no goal node"),
            LoopMemberMarkedEntry { node, loop_count } => write!(
                f,
                "node {node:?} belongs to loop {loop_count:?} and may not be an entry"
            ),
            LoopMemberMarkedGoal { node, loop_count } => write!(
                f,
                "node {node:?} belongs to loop {loop_count:?} and may not be a goal"
            ),
            LoopChildCount { loop_count, found } => write!(
                f,
                "loop count {loop_count:?} must have exactly two children, found {found}"
            ),
            LoopWithoutExitChild { loop_count } => write!(
                f,
                "loop count {loop_count:?} has no loop exit among its children"
            ),
            LoopWithTwoExitChildren { loop_count } => write!(
                f,
                "loop count {loop_count:?} has two loop exit children and no first node"
            ),
            FirstNodeParentCount {
                loop_count,
                first_node,
                found,
            } => write!(
                f,
                "first node {first_node:?} of loop {loop_count:?} must have exactly one parent \
                 besides the loop count, found {found}"
            ),
            BadLoopCountValue { loop_count, value } => write!(
                f,
                "loop count {loop_count:?} must carry a positive count or -1, found {value}"
            ),
            BreakParentNotEntrance { break_node, loop_count } => write!(
                f,
                "break node {break_node:?} of loop {loop_count:?} must have the loop entrance \
                 as its only parent"
            ),
            BreakChildNotExit { break_node, loop_count } => write!(
                f,
                "break node {break_node:?} of loop {loop_count:?} must have the loop exit as \
                 its only child"
            ),
            ExitParentNotBreak { exit, node } => write!(
                f,
                "node {node:?} feeds loop exit {exit:?} but is not that loop's break node"
            ),
            BreakWithoutLoop { node } => write!(
                f,
                "node {node:?} is flagged as a break node but is not wired to any loop exit"
            ),
            LoopBypassReachesExit { entrance, child, exit } => write!(
                f,
                "child {child:?} of loop entrance {entrance:?} reaches loop exit {exit:?} \
                 around the loop"
            ),
            ConditionLeafNotParent { logic, leaf } => write!(
                f,
                "logic node {logic:?} mentions {leaf:?}, which is not one of its parents"
            ),
            VacuousCondition { logic } => {
                write!(f, "logic node {logic:?} has a condition with no leaves")
            }
            ExitWithoutLoopCount { exit } => {
                write!(f, "loop exit {exit:?} has no loop count parent")
            }
            ExitSharedByLoopCounts { exit, loop_counts } => write!(
                f,
                "loop exit {exit:?} is shared by loop counts {loop_counts:?}"
            ),
            OverlappingLoops { a, b } => {
                write!(f, "loops {a:?} and {b:?} overlap or nest")
            }
            CycleOutsideLoops { witness } => write!(
                f,
                "cycle outside any loop-back edge: {}",
                witness
                    .iter()
                    .map(|n| format!("{n:?}"))
                    .collect::<Vec<_>>()
                    .join(" -> ")
            ),
        }
    }
}

/// A legal-but-suspicious shape.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Warning {
    /// Entry nodes are activated unconditionally at start; parents still
    /// re-activate them, which is rarely what the author meant.
    EntryHasParents { node: NodeId },
    /// Guarded effect nodes conventionally sit as the sole, childless
    /// effect of a single activation parent.
    EffectPairing { node: NodeId, detail: String },
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::EntryHasParents { node } => {
                write!(f, "entry node {node:?} has parents; it is activated at start regardless")
            }
            Warning::EffectPairing { node, detail } => {
                write!(f, "guarded effect {node:?}: {detail}")
            }
        }
    }
}

/// Outcome of [`validate`]: all broken rules plus advisory warnings.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub warnings: Vec<Warning>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "error: {v}")?;
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        if self.violations.is_empty() {
            writeln!(f, "graph is valid")?;
        }
        Ok(())
    }
}

/// Whether `target` is reachable from `from` along directed edges
/// (loop-back edges included).
fn reaches(g: &Graph, from: &NodeId, target: &NodeId) -> bool {
    let mut seen = BTreeSet::new();
    let mut queue = vec![from.clone()];
    while let Some(n) = queue.pop() {
        if n == *target {
            return true;
        }
        if !seen.insert(n.clone()) {
            continue;
        }
        for c in g.children_of(&n) {
            queue.push(c.clone());
        }
    }
    false
}

/// Depth-first cycle search on the graph with `skip` edges removed.
/// Returns the nodes of one cycle, in edge order, if any exists.
fn find_cycle(g: &Graph, skip: &BTreeSet<(NodeId, NodeId)>) -> Option<Vec<NodeId>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Color {
        White,
        Gray,
        Black,
    }
    let mut color: BTreeMap<NodeId, Color> =
        g.node_ids().map(|n| (n.clone(), Color::White)).collect();

    let kids = |n: &NodeId| -> Vec<NodeId> {
        g.children_of(n)
            .iter()
            .filter(|c| !skip.contains(&(n.clone(), (*c).clone())))
            .cloned()
            .collect()
    };

    for start in g.node_ids() {
        if color[start] != Color::White {
            continue;
        }
        let mut stack: Vec<(NodeId, Vec<NodeId>, usize)> = vec![(start.clone(), kids(start), 0)];
        color.insert(start.clone(), Color::Gray);
        while let Some((n, children, i)) = stack.last_mut() {
            if *i == children.len() {
                color.insert(n.clone(), Color::Black);
                stack.pop();
                continue;
            }
            let c = children[*i].clone();
            *i += 1;
            match color[&c] {
                Color::White => {
                    color.insert(c.clone(), Color::Gray);
                    let c_kids = kids(&c);
                    stack.push((c, c_kids, 0));
                }
                Color::Gray => {
                    let pos = stack.iter().position(|(m, _, _)| *m == c).unwrap();
                    return Some(stack[pos..].iter().map(|(m, _, _)| m.clone()).collect());
                }
                Color::Black => {}
            }
        }
    }
    None
}

/// Checks the eight structural rules and the advisory lints. The report
/// lists every violation found, ordered by rule number.
pub fn validate(g: &Graph) -> ValidationReport {
    let mut violations = Vec::new();
    let mut warnings = Vec::new();

    // Rule 1: at least one entry and one goal.
    if g.entry_nodes().is_empty() {
        violations.push(Violation::NoEntryNode);
    }
    if g.goal_nodes().is_empty() {
        violations.push(Violation::NoGoalNode);
    }

    // Per-loop shape checks (rules 2-5), collecting resolved loops for
    // the overlap and cycle checks of rule 8.
    struct ResolvedLoop {
        loop_count: NodeId,
        first: NodeId,
        members: BTreeSet<NodeId>,
    }
    let mut resolved: Vec<ResolvedLoop> = Vec::new();
    let mut consumed_breaks: BTreeSet<NodeId> = BTreeSet::new();

    for l in g.loop_count_nodes() {
        let initial = g.label_of(&l).loop_count_initial().unwrap();
        if initial == 0 || initial < -1 {
            violations.push(Violation::BadLoopCountValue {
                loop_count: l.clone(),
                value: initial,
            });
        }

        let (first, exit) = match loop_children(g, &l) {
            Ok(pair) => pair,
            Err(LoopShapeIssue::ChildCount(found)) => {
                violations.push(Violation::LoopChildCount {
                    loop_count: l.clone(),
                    found,
                });
                continue;
            }
            Err(LoopShapeIssue::NoExit) => {
                violations.push(Violation::LoopWithoutExitChild { loop_count: l.clone() });
                continue;
            }
            Err(LoopShapeIssue::TwoExits) => {
                violations.push(Violation::LoopWithTwoExitChildren { loop_count: l.clone() });
                continue;
            }
        };

        // Rule 3: exactly one parent besides the loop count — the loop
        // entrance.
        let outside_parents: Vec<&NodeId> =
            g.parents_of(&first).iter().filter(|p| **p != l).collect();
        let entrance = if outside_parents.len() == 1 {
            Some(outside_parents[0].clone())
        } else {
            violations.push(Violation::FirstNodeParentCount {
                loop_count: l.clone(),
                first_node: first.clone(),
                found: outside_parents.len(),
            });
            None
        };

        let internal = internal_nodes(g, &first, &l);

        // Rule 4: parents of the exit besides the loop count must be
        // properly wired break nodes.
        let mut break_nodes: Vec<NodeId> = Vec::new();
        for p in g.parents_of(&exit) {
            if *p == l {
                continue;
            }
            if g.label_of(p).is_break() {
                break_nodes.push(p.clone());
                consumed_breaks.insert(p.clone());
                if g.children_of(p).len() != 1 {
                    violations.push(Violation::BreakChildNotExit {
                        break_node: p.clone(),
                        loop_count: l.clone(),
                    });
                }
                if let Some(entrance) = &entrance {
                    let parents = g.parents_of(p);
                    if parents.len() != 1 || !parents.contains(entrance) {
                        violations.push(Violation::BreakParentNotEntrance {
                            break_node: p.clone(),
                            loop_count: l.clone(),
                        });
                    }
                }
            } else {
                violations.push(Violation::ExitParentNotBreak {
                    exit: exit.clone(),
                    node: p.clone(),
                });
            }
        }

        // Rule 2: nothing belonging to the loop may be an entry or goal.
        for member in internal.iter().chain(break_nodes.iter()) {
            let label = g.label_of(member);
            if label.is_entry() {
                violations.push(Violation::LoopMemberMarkedEntry {
                    node: member.clone(),
                    loop_count: l.clone(),
                });
            }
            if label.is_goal() {
                violations.push(Violation::LoopMemberMarkedGoal {
                    node: member.clone(),
                    loop_count: l.clone(),
                });
            }
        }

        // Rule 5: no sibling path from the entrance may sidestep the loop
        // and still arrive at its exit.
        if let Some(entrance) = &entrance {
            for child in g.children_of(entrance) {
                if *child == first || break_nodes.contains(child) {
                    continue;
                }
                if reaches(g, child, &exit) {
                    violations.push(Violation::LoopBypassReachesExit {
                        entrance: entrance.clone(),
                        child: child.clone(),
                        exit: exit.clone(),
                    });
                }
            }
        }

        let mut members = internal.clone();
        members.insert(l.clone());
        members.insert(exit.clone());
        members.extend(break_nodes.iter().cloned());
        resolved.push(ResolvedLoop {
            loop_count: l.clone(),
            first,
            members,
        });
    }

    // Rule 4 leftover: break flags that no loop accounts for.
    for n in g.node_ids() {
        if g.label_of(n).is_break() && !consumed_breaks.contains(n) {
            violations.push(Violation::BreakWithoutLoop { node: n.clone() });
        }
    }

    // Rule 6: logic conditions mention only parents, and mention something.
    for logic in g.logic_nodes() {
        let condition = g.label_of(&logic).condition().unwrap();
        if condition.is_vacuous() {
            violations.push(Violation::VacuousCondition { logic: logic.clone() });
        }
        let parents = g.parents_of(&logic);
        for leaf in condition.leaves() {
            if !parents.contains(&leaf) {
                violations.push(Violation::ConditionLeafNotParent {
                    logic: logic.clone(),
                    leaf,
                });
            }
        }
    }

    // Rule 7: every exit is owned by exactly one loop count.
    for exit in g.loop_exit_nodes() {
        let owners: Vec<NodeId> = g
            .parents_of(&exit)
            .iter()
            .filter(|p| g.label_of(p).kind() == NodeKind::LoopCount)
            .cloned()
            .collect();
        match owners.len() {
            0 => violations.push(Violation::ExitWithoutLoopCount { exit }),
            1 => {}
            _ => violations.push(Violation::ExitSharedByLoopCounts {
                exit,
                loop_counts: owners,
            }),
        }
    }

    // Rule 8: loop footprints are pairwise disjoint...
    for (i, a) in resolved.iter().enumerate() {
        for b in &resolved[i + 1..] {
            if a.members.intersection(&b.members).next().is_some() {
                violations.push(Violation::OverlappingLoops {
                    a: a.loop_count.clone(),
                    b: b.loop_count.clone(),
                });
            }
        }
    }

    // ...and removing the loop-back edges leaves an acyclic graph.
    let loop_back: BTreeSet<(NodeId, NodeId)> = resolved
        .iter()
        .map(|r| (r.loop_count.clone(), r.first.clone()))
        .collect();
    if let Some(witness) = find_cycle(g, &loop_back) {
        violations.push(Violation::CycleOutsideLoops { witness });
    }

    // Advisory lints.
    for entry in g.entry_nodes() {
        if !g.parents_of(&entry).is_empty() {
            warnings.push(Warning::EntryHasParents { node: entry });
        }
    }
    for n in g.node_ids() {
        if g.label_of(n).kind() != NodeKind::GuardedEffect {
            continue;
        }
        let parents = g.parents_of(n);
        if parents.len() != 1 {
            warnings.push(Warning::EffectPairing {
                node: n.clone(),
                detail: format!("expected exactly one parent, found {}", parents.len()),
            });
        } else {
            let parent = parents.iter().next().unwrap();
            if g.label_of(parent).kind() != NodeKind::Activation {
                warnings.push(Warning::EffectPairing {
                    node: n.clone(),
                    detail: format!(
                        "parent {parent:?} is a {} node, expected an activation",
                        g.label_of(parent).kind()
                    ),
                });
            }
            let sibling_effects: Vec<&NodeId> = g
                .children_of(parent)
                .iter()
                .filter(|c| *c != n && g.label_of(c).kind() == NodeKind::GuardedEffect)
                .collect();
            if let Some(other) = sibling_effects.first() {
                warnings.push(Warning::EffectPairing {
                    node: n.clone(),
                    detail: format!("parent {parent:?} also feeds guarded effect {other:?}"),
                });
            }
        }
        if !g.children_of(n).is_empty() {
            warnings.push(Warning::EffectPairing {
                node: n.clone(),
                detail: "effect nodes conventionally have no children".to_string(),
            });
        }
    }

    violations.sort_by_key(Violation::rule);
    ValidationReport {
        violations,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{BoolExpr, EffectRef, NodeLabel, Watchpoint};

    fn id(s: &str) -> NodeId {
        NodeId::new(s)
    }

    fn act(wp: &str) -> NodeLabel {
        NodeLabel::activation(Watchpoint::atom(wp))
    }

    fn rules_of(report: &ValidationReport) -> Vec<u8> {
        report.violations.iter().map(Violation::rule).collect()
    }

    #[test]
    fn single_node_entry_goal_graph_is_valid() {
        let g = Graph::new(
            vec![(
                id("only"),
                NodeLabel::activation(Watchpoint::Top).marked_entry().marked_goal(),
            )],
            vec![],
        )
        .unwrap();
        let report = validate(&g);
        assert!(report.is_valid());
        assert!(report.warnings.is_empty());
    }

    #[test]
    fn missing_entry_and_goal_are_rule_one() {
        let g = Graph::new(vec![(id("a"), act("w"))], vec![]).unwrap();
        let report = validate(&g);
        assert_eq!(rules_of(&report), vec![1, 1]);
    }

    fn loop_graph_parts() -> (Vec<(NodeId, NodeLabel)>, Vec<(NodeId, NodeId)>) {
        (
            vec![
                (id("e"), act("go").marked_entry()),
                (id("b1"), act("w1")),
                (id("b2"), act("w2")),
                (id("l"), NodeLabel::loop_count(2)),
                (id("x"), NodeLabel::loop_exit()),
                (id("g"), act("fin").marked_goal()),
            ],
            vec![
                (id("e"), id("b1")),
                (id("b1"), id("b2")),
                (id("b2"), id("l")),
                (id("l"), id("b1")),
                (id("l"), id("x")),
                (id("x"), id("g")),
            ],
        )
    }

    #[test]
    fn well_formed_loop_is_valid() {
        let (nodes, edges) = loop_graph_parts();
        let g = Graph::new(nodes, edges).unwrap();
        assert!(validate(&g).is_valid());
    }

    #[test]
    fn first_node_with_two_outside_parents_is_rule_three() {
        let (mut nodes, mut edges) = loop_graph_parts();
        nodes.push((id("q"), act("side")));
        edges.push((id("q"), id("b1")));
        let g = Graph::new(nodes, edges).unwrap();
        let report = validate(&g);
        assert!(report.violations.iter().any(|v| matches!(
            v,
            Violation::FirstNodeParentCount { found: 2, .. }
        )));
    }

    #[test]
    fn zero_loop_count_is_rule_three() {
        let (mut nodes, edges) = loop_graph_parts();
        nodes[3] = (id("l"), NodeLabel::loop_count(0));
        let g = Graph::new(nodes, edges).unwrap();
        assert!(validate(&g)
            .violations
            .contains(&Violation::BadLoopCountValue { loop_count: id("l"), value: 0 }));
    }

    #[test]
    fn loop_member_marked_goal_is_rule_two() {
        let (mut nodes, edges) = loop_graph_parts();
        nodes[2] = (id("b2"), act("w2").marked_goal());
        let g = Graph::new(nodes, edges).unwrap();
        assert!(validate(&g)
            .violations
            .contains(&Violation::LoopMemberMarkedGoal { node: id("b2"), loop_count: id("l") }));
    }

    #[test]
    fn break_node_with_two_children_is_rule_four() {
        let (mut nodes, mut edges) = loop_graph_parts();
        nodes.push((id("brk"), act("stop").marked_break()));
        nodes.push((id("stray"), act("s")));
        edges.push((id("e"), id("brk")));
        edges.push((id("brk"), id("x")));
        edges.push((id("brk"), id("stray")));
        let g = Graph::new(nodes, edges).unwrap();
        assert!(validate(&g)
            .violations
            .contains(&Violation::BreakChildNotExit { break_node: id("brk"), loop_count: id("l") }));
    }

    #[test]
    fn flagged_break_not_wired_to_an_exit_is_rule_four() {
        let g = Graph::new(
            vec![
                (id("e"), act("go").marked_entry()),
                (id("b"), act("stop").marked_break()),
                (id("g"), act("fin").marked_goal()),
            ],
            vec![(id("e"), id("b")), (id("b"), id("g"))],
        )
        .unwrap();
        assert!(validate(&g)
            .violations
            .contains(&Violation::BreakWithoutLoop { node: id("b") }));
    }

    #[test]
    fn unflagged_parent_of_exit_is_rule_four() {
        let (mut nodes, mut edges) = loop_graph_parts();
        nodes.push((id("q"), act("q")));
        edges.push((id("e"), id("q")));
        edges.push((id("q"), id("x")));
        let g = Graph::new(nodes, edges).unwrap();
        let report = validate(&g);
        assert!(report
            .violations
            .contains(&Violation::ExitParentNotBreak { exit: id("x"), node: id("q") }));
        // The same wiring is also a bypass from the entrance to the exit.
        assert!(report.violations.iter().any(|v| v.rule() == 5));
    }

    #[test]
    fn entrance_sibling_reaching_the_exit_is_rule_five() {
        let (mut nodes, mut edges) = loop_graph_parts();
        nodes.push((id("side1"), act("s1")));
        nodes.push((id("side2"), act("s2")));
        edges.push((id("e"), id("side1")));
        edges.push((id("side1"), id("side2")));
        edges.push((id("side2"), id("b2")));
        let g = Graph::new(nodes, edges).unwrap();
        assert!(validate(&g).violations.contains(&Violation::LoopBypassReachesExit {
            entrance: id("e"),
            child: id("side1"),
            exit: id("x"),
        }));
    }

    #[test]
    fn condition_mentioning_a_stranger_is_rule_six() {
        let g = Graph::new(
            vec![
                (id("e"), act("go").marked_entry()),
                (id("j"), NodeLabel::logic(BoolExpr::And(vec![
                    BoolExpr::node("e"),
                    BoolExpr::node("ghost"),
                ]))),
                (id("ghost"), act("g")),
                (id("goal"), act("fin").marked_goal()),
            ],
            vec![(id("e"), id("j")), (id("j"), id("goal"))],
        )
        .unwrap();
        assert!(validate(&g)
            .violations
            .contains(&Violation::ConditionLeafNotParent { logic: id("j"), leaf: id("ghost") }));
    }

    #[test]
    fn vacuous_condition_is_rule_six() {
        let g = Graph::new(
            vec![
                (id("e"), act("go").marked_entry()),
                (id("j"), NodeLabel::logic(BoolExpr::Or(vec![]))),
                (id("goal"), act("fin").marked_goal()),
            ],
            vec![(id("e"), id("j")), (id("j"), id("goal"))],
        )
        .unwrap();
        assert!(validate(&g)
            .violations
            .contains(&Violation::VacuousCondition { logic: id("j") }));
    }

    #[test]
    fn orphan_exit_is_rule_seven() {
        let g = Graph::new(
            vec![
                (id("e"), act("go").marked_entry().marked_goal()),
                (id("x"), NodeLabel::loop_exit()),
            ],
            vec![(id("e"), id("x"))],
        )
        .unwrap();
        let report = validate(&g);
        assert_eq!(
            report.violations,
            vec![Violation::ExitWithoutLoopCount { exit: id("x") }]
        );
    }

    #[test]
    fn shared_exit_is_rule_seven() {
        // Two complete loops that funnel into one exit node.
        let g = Graph::new(
            vec![
                (id("e"), act("go").marked_entry()),
                (id("a"), act("wa")),
                (id("b"), act("wb")),
                (id("la"), NodeLabel::loop_count(1)),
                (id("lb"), NodeLabel::loop_count(1)),
                (id("x"), NodeLabel::loop_exit()),
                (id("g"), act("fin").marked_goal()),
            ],
            vec![
                (id("e"), id("a")),
                (id("e"), id("b")),
                (id("a"), id("la")),
                (id("b"), id("lb")),
                (id("la"), id("a")),
                (id("lb"), id("b")),
                (id("la"), id("x")),
                (id("lb"), id("x")),
                (id("x"), id("g")),
            ],
        )
        .unwrap();
        assert!(validate(&g).violations.iter().any(|v| matches!(
            v,
            Violation::ExitSharedByLoopCounts { .. }
        )));
    }

    #[test]
    fn nested_loops_are_rule_eight() {
        // Inner loop (li over ib) sits inside outer loop (lo over a..ib..c).
        let g = Graph::new(
            vec![
                (id("e"), act("go").marked_entry()),
                (id("a"), act("wa")),
                (id("ib"), act("wi")),
                (id("li"), NodeLabel::loop_count(1)),
                (id("xi"), NodeLabel::loop_exit()),
                (id("c"), act("wc")),
                (id("lo"), NodeLabel::loop_count(1)),
                (id("xo"), NodeLabel::loop_exit()),
                (id("g"), act("fin").marked_goal()),
            ],
            vec![
                (id("e"), id("a")),
                (id("a"), id("ib")),
                (id("ib"), id("li")),
                (id("li"), id("ib")),
                (id("li"), id("xi")),
                (id("xi"), id("c")),
                (id("c"), id("lo")),
                (id("lo"), id("a")),
                (id("lo"), id("xo")),
                (id("xo"), id("g")),
            ],
        )
        .unwrap();
        let report = validate(&g);
        assert!(report.violations.iter().any(|v| v.rule() == 8));
    }

    #[test]
    fn cycle_without_loop_nodes_is_rule_eight() {
        let g = Graph::new(
            vec![
                (id("e"), act("go").marked_entry()),
                (id("a"), act("wa")),
                (id("b"), act("wb")),
                (id("g"), act("fin").marked_goal()),
            ],
            vec![
                (id("e"), id("a")),
                (id("a"), id("b")),
                (id("b"), id("a")),
                (id("b"), id("g")),
            ],
        )
        .unwrap();
        assert!(validate(&g)
            .violations
            .iter()
            .any(|v| matches!(v, Violation::CycleOutsideLoops { .. })));
    }

    #[test]
    fn entry_with_parents_is_a_warning_not_an_error() {
        let g = Graph::new(
            vec![
                (id("a"), act("w1").marked_entry()),
                (id("b"), act("w2").marked_entry().marked_goal()),
            ],
            vec![(id("a"), id("b"))],
        )
        .unwrap();
        let report = validate(&g);
        assert!(report.is_valid());
        assert_eq!(
            report.warnings,
            vec![Warning::EntryHasParents { node: id("b") }]
        );
    }

    #[test]
    fn effect_pairing_lints() {
        let g = Graph::new(
            vec![
                (id("e"), act("go").marked_entry().marked_goal()),
                (
                    id("fx"),
                    NodeLabel::guarded_effect(Watchpoint::Top, EffectRef::new("run")),
                ),
                (
                    id("fx2"),
                    NodeLabel::guarded_effect(Watchpoint::Top, EffectRef::new("run2")),
                ),
                (id("tail"), act("t")),
            ],
            vec![
                (id("e"), id("fx")),
                (id("e"), id("fx2")),
                (id("fx"), id("tail")),
            ],
        )
        .unwrap();
        let report = validate(&g);
        assert!(report.is_valid());
        // fx: shared parent + has a child; fx2: shared parent.
        let about_fx: Vec<_> = report
            .warnings
            .iter()
            .filter(|w| matches!(w, Warning::EffectPairing { node, .. } if *node == id("fx")))
            .collect();
        assert_eq!(about_fx.len(), 2);
        assert_eq!(report.warnings.len(), 3);
    }

    #[test]
    fn violations_are_sorted_by_rule() {
        let g = Graph::new(
            vec![
                (id("x"), NodeLabel::loop_exit()),
                (id("j"), NodeLabel::logic(BoolExpr::And(vec![]))),
            ],
            vec![],
        )
        .unwrap();
        let rules = rules_of(&validate(&g));
        let mut sorted = rules.clone();
        sorted.sort();
        assert_eq!(rules, sorted);
        assert_eq!(rules, vec![1, 1, 6, 7]);
    }
}
