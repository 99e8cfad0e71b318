//! Loop structure discovery.
//!
//! A loop is anchored by its loop count node `l`: one of `l`'s two
//! children is the loop's *first node* (the target of the loop-back
//! edge), the other is its *loop exit*. The *internal nodes* are every
//! node on some path from the first node to `l` that does not traverse
//! the loop-back edge. A loop may additionally have a *break node*: an
//! activation node hanging off the loop entrance whose firing routes
//! control straight to the exit.
//!
//! Two reset sets fall out of this shape. When the loop count fires it
//! clears just the internal nodes (arming the body for the next pass);
//! when the exit fires it also clears the loop count and any break node,
//! leaving no trace of the loop's machinery behind.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use crate::graph::{Graph, NodeId, NodeKind};

/// Everything the engine needs to know about one loop, keyed by its loop
/// count node in [`compute_loop_info`]'s result.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct LoopInfo {
    pub loop_count: NodeId,
    /// Target of the loop-back edge; where each new iteration starts.
    pub first_node: NodeId,
    pub exit_node: NodeId,
    pub break_node: Option<NodeId>,
    /// Nodes cleared when the loop count fires (the loop body, first
    /// node included).
    pub internal_nodes: BTreeSet<NodeId>,
    /// Nodes cleared when the exit fires: the body plus the loop count
    /// plus the break node, if any.
    pub exit_reset_nodes: BTreeSet<NodeId>,
}

/// Why a loop count node's children do not form a recognizable loop.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub(crate) enum LoopShapeIssue {
    /// The loop count does not have exactly two children.
    ChildCount(usize),
    /// Neither child is a loop exit node.
    NoExit,
    /// Both children are loop exit nodes, so there is no first node.
    TwoExits,
}

/// Splits a loop count node's children into `(first_node, exit_node)`.
pub(crate) fn loop_children(g: &Graph, l: &NodeId) -> Result<(NodeId, NodeId), LoopShapeIssue> {
    let children = g.children_of(l);
    if children.len() != 2 {
        return Err(LoopShapeIssue::ChildCount(children.len()));
    }
    let mut exits = children
        .iter()
        .filter(|c| g.label_of(c).kind() == NodeKind::LoopExit);
    let exit = match (exits.next(), exits.next()) {
        (Some(_), Some(_)) => return Err(LoopShapeIssue::TwoExits),
        (Some(e), None) => e.clone(),
        (None, _) => return Err(LoopShapeIssue::NoExit),
    };
    let first = children.iter().find(|c| **c != exit).unwrap().clone();
    Ok((first, exit))
}

/// Nodes on some path from `first` to the loop count `l` that does not
/// traverse the loop-back edge, excluding `l` itself (and always
/// including `first`). Works on arbitrary syntactically well-formed
/// graphs; callers decide what a violation means.
pub(crate) fn internal_nodes(g: &Graph, first: &NodeId, l: &NodeId) -> BTreeSet<NodeId> {
    // Forward sweep from the first node, never expanding past the loop
    // count (its outgoing edges are the loop-back edge and the exit edge,
    // neither of which belongs to a body path).
    let mut forward: BTreeSet<NodeId> = BTreeSet::new();
    let mut queue = vec![first.clone()];
    while let Some(n) = queue.pop() {
        if !forward.insert(n.clone()) || n == *l {
            continue;
        }
        for c in g.children_of(&n) {
            queue.push(c.clone());
        }
    }

    // Backward sweep from the loop count. Expansion stops at `first`:
    // every body path starts there, and continuing into its parents
    // would traverse the loop-back edge backwards (or leave the loop
    // through the entrance).
    let mut backward: BTreeSet<NodeId> = BTreeSet::new();
    let mut queue = vec![l.clone()];
    while let Some(n) = queue.pop() {
        if !backward.insert(n.clone()) || n == *first {
            continue;
        }
        for p in g.parents_of(&n) {
            queue.push(p.clone());
        }
    }

    forward
        .intersection(&backward)
        .filter(|n| *n != l)
        .cloned()
        .collect()
}

/// Computes [`LoopInfo`] for every loop count node in the graph, keyed
/// by that node. Requires a graph that already passed validation; the
/// loop shapes it relies on are guaranteed there.
///
/// The result is pure data derived from the graph alone: calling this
/// twice yields equal maps.
pub fn compute_loop_info(g: &Graph) -> BTreeMap<NodeId, LoopInfo> {
    let mut out = BTreeMap::new();
    for l in g.loop_count_nodes() {
        let (first, exit) = loop_children(g, &l)
            .unwrap_or_else(|issue| panic!("loop {l:?} failed validation: {issue:?}"));
        let internal = internal_nodes(g, &first, &l);
        let break_node = g.parents_of(&exit).iter().find(|p| **p != l).cloned();
        let mut exit_reset = internal.clone();
        exit_reset.insert(l.clone());
        if let Some(b) = &break_node {
            exit_reset.insert(b.clone());
        }
        out.insert(
            l.clone(),
            LoopInfo {
                loop_count: l.clone(),
                first_node: first,
                exit_node: exit,
                break_node,
                internal_nodes: internal,
                exit_reset_nodes: exit_reset,
            },
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{NodeLabel, Watchpoint};

    fn id(s: &str) -> NodeId {
        NodeId::new(s)
    }

    fn act(wp: &str) -> NodeLabel {
        NodeLabel::activation(Watchpoint::atom(wp))
    }

    /// entrance -> a5 -> a6 -> count; count -> a5 (loop-back); count -> exit.
    fn two_node_loop() -> Graph {
        Graph::new(
            vec![
                (id("entrance"), act("go").marked_entry()),
                (id("a5"), act("w5")),
                (id("a6"), act("w6")),
                (id("count"), NodeLabel::loop_count(4)),
                (id("exit"), NodeLabel::loop_exit()),
                (id("after"), act("done").marked_goal()),
            ],
            vec![
                (id("entrance"), id("a5")),
                (id("a5"), id("a6")),
                (id("a6"), id("count")),
                (id("count"), id("a5")),
                (id("count"), id("exit")),
                (id("exit"), id("after")),
            ],
        )
        .unwrap()
    }

    #[test]
    fn body_and_reset_sets_for_a_two_node_loop() {
        let g = two_node_loop();
        let info = compute_loop_info(&g);
        let li = &info[&id("count")];
        assert_eq!(li.first_node, id("a5"));
        assert_eq!(li.exit_node, id("exit"));
        assert_eq!(li.break_node, None);
        assert_eq!(
            li.internal_nodes,
            [id("a5"), id("a6")].into_iter().collect()
        );
        assert_eq!(
            li.exit_reset_nodes,
            [id("a5"), id("a6"), id("count")].into_iter().collect()
        );
    }

    #[test]
    fn single_node_body() {
        let g = Graph::new(
            vec![
                (id("e"), act("go").marked_entry()),
                (id("b"), act("w")),
                (id("l"), NodeLabel::loop_count(1)),
                (id("x"), NodeLabel::loop_exit()),
                (id("g"), act("fin").marked_goal()),
            ],
            vec![
                (id("e"), id("b")),
                (id("b"), id("l")),
                (id("l"), id("b")),
                (id("l"), id("x")),
                (id("x"), id("g")),
            ],
        )
        .unwrap();
        let li = &compute_loop_info(&g)[&id("l")];
        assert_eq!(li.internal_nodes, [id("b")].into_iter().collect());
        assert_eq!(
            li.exit_reset_nodes,
            [id("b"), id("l")].into_iter().collect()
        );
    }

    #[test]
    fn break_node_joins_the_exit_reset_set_only() {
        let g = Graph::new(
            vec![
                (id("e"), act("go").marked_entry()),
                (id("b1"), act("w1")),
                (id("brk"), act("stop").marked_break()),
                (id("l"), NodeLabel::loop_count(-1)),
                (id("x"), NodeLabel::loop_exit()),
                (id("g"), act("fin").marked_goal()),
            ],
            vec![
                (id("e"), id("b1")),
                (id("e"), id("brk")),
                (id("b1"), id("l")),
                (id("l"), id("b1")),
                (id("l"), id("x")),
                (id("brk"), id("x")),
                (id("x"), id("g")),
            ],
        )
        .unwrap();
        let li = &compute_loop_info(&g)[&id("l")];
        assert_eq!(li.break_node, Some(id("brk")));
        assert_eq!(li.internal_nodes, [id("b1")].into_iter().collect());
        assert!(li.exit_reset_nodes.contains(&id("brk")));
        assert!(li.exit_reset_nodes.contains(&id("l")));
        assert!(!li.internal_nodes.contains(&id("brk")));
    }

    #[test]
    fn recomputing_yields_equal_data() {
        let g = two_node_loop();
        assert_eq!(compute_loop_info(&g), compute_loop_info(&g));
    }

    #[test]
    fn side_feeds_into_the_body_stay_out_of_the_internal_set() {
        // q feeds a6 from outside the loop; it reaches the loop count but
        // is not reachable from the first node, so it is not internal.
        let g = Graph::new(
            vec![
                (id("e"), act("go").marked_entry()),
                (id("q"), act("side")),
                (id("a5"), act("w5")),
                (id("a6"), act("w6")),
                (id("l"), NodeLabel::loop_count(2)),
                (id("x"), NodeLabel::loop_exit()),
                (id("g"), act("fin").marked_goal()),
            ],
            vec![
                (id("e"), id("a5")),
                (id("q"), id("a6")),
                (id("a5"), id("a6")),
                (id("a6"), id("l")),
                (id("l"), id("a5")),
                (id("l"), id("x")),
                (id("x"), id("g")),
            ],
        )
        .unwrap();
        let li = &compute_loop_info(&g)[&id("l")];
        assert_eq!(
            li.internal_nodes,
            [id("a5"), id("a6")].into_iter().collect()
        );
    }
}
