//! Collapsing chained logic nodes.
//!
//! The engine requires *collapsed form*: no logic node may have another
//! logic node as a parent. Chains of logic nodes express nothing a
//! single join point cannot, so [`collapse`] folds each logic parent
//! into its logic children: the parent's condition is substituted for
//! the leaf that names it, and the parent's parents become parents of
//! the merged node. A parent that still feeds non-logic children stays
//! in the graph; one whose only purpose was the chain is removed.
//!
//! Substitution splices same-operator conditions — an `or` replacing a
//! leaf under an `or` contributes its operands directly — so chains
//! flatten into one n-ary condition rather than nesting.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::graph::{BoolExpr, Graph, NodeId, NodeKind, NodeLabel};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CollapseError {
    /// Logic nodes that feed each other in a cycle cannot be merged.
    #[error("logic nodes form a cycle and cannot be collapsed: {0:?}")]
    CyclicLogicChain(Vec<NodeId>),
    /// A logic parent the child's condition never mentions has no leaf
    /// to substitute into; the chain is malformed.
    #[error("logic node {logic:?} has logic parent {parent:?} but its condition never mentions it")]
    UnreferencedLogicParent { logic: NodeId, parent: NodeId },
}

/// True when no logic node has a logic parent — the form the engine
/// accepts.
pub fn is_collapsed(g: &Graph) -> bool {
    g.logic_nodes().iter().all(|n| {
        g.parents(n)
            .unwrap()
            .iter()
            .all(|p| g.label(p).unwrap().kind() != NodeKind::Logic)
    })
}

/// Replaces every leaf naming `target` with `replacement`, splicing
/// same-operator lists flat. Returns the rewritten expression and
/// whether any leaf matched.
fn substitute(expr: &BoolExpr, target: &NodeId, replacement: &BoolExpr) -> (BoolExpr, bool) {
    match expr {
        BoolExpr::Node(n) if n == target => (replacement.clone(), true),
        BoolExpr::Node(_) => (expr.clone(), false),
        BoolExpr::And(items) => {
            let mut found = false;
            let mut out = Vec::with_capacity(items.len());
            for item in items {
                if matches!(item, BoolExpr::Node(n) if n == target) {
                    found = true;
                    match replacement {
                        BoolExpr::And(sub) => out.extend(sub.iter().cloned()),
                        other => out.push(other.clone()),
                    }
                } else {
                    let (rewritten, hit) = substitute(item, target, replacement);
                    found |= hit;
                    out.push(rewritten);
                }
            }
            (BoolExpr::And(out), found)
        }
        BoolExpr::Or(items) => {
            let mut found = false;
            let mut out = Vec::with_capacity(items.len());
            for item in items {
                if matches!(item, BoolExpr::Node(n) if n == target) {
                    found = true;
                    match replacement {
                        BoolExpr::Or(sub) => out.extend(sub.iter().cloned()),
                        other => out.push(other.clone()),
                    }
                } else {
                    let (rewritten, hit) = substitute(item, target, replacement);
                    found |= hit;
                    out.push(rewritten);
                }
            }
            (BoolExpr::Or(out), found)
        }
    }
}

/// Rewrites the graph into collapsed form. Graphs already in collapsed
/// form come back identical, so the operation is idempotent.
pub fn collapse(g: &Graph) -> Result<Graph, CollapseError> {
    let mut labels: BTreeMap<NodeId, NodeLabel> = g
        .node_ids()
        .map(|id| (id.clone(), g.label(id).unwrap().clone()))
        .collect();
    let mut edges: BTreeSet<(NodeId, NodeId)> = g
        .edges()
        .map(|(p, c)| (p.clone(), c.clone()))
        .collect();

    let is_logic = |labels: &BTreeMap<NodeId, NodeLabel>, n: &NodeId| {
        labels.get(n).map(|l| l.kind()) == Some(NodeKind::Logic)
    };

    loop {
        // Find the smallest (child, parent) logic-logic edge whose parent
        // is "ready": it has no logic parents of its own, so its
        // condition is final and safe to inline.
        let mut candidate: Option<(NodeId, NodeId)> = None;
        let mut chained = false;
        for (p, c) in &edges {
            if !is_logic(&labels, p) || !is_logic(&labels, c) {
                continue;
            }
            chained = true;
            let parent_ready = !edges
                .iter()
                .any(|(q, r)| r == p && is_logic(&labels, q));
            if parent_ready {
                candidate = Some((c.clone(), p.clone()));
                break;
            }
        }

        let Some((child, parent)) = candidate else {
            if chained {
                // Logic-logic edges remain but none has a ready parent:
                // the chain is cyclic.
                let cycle: Vec<NodeId> = edges
                    .iter()
                    .filter(|(p, c)| is_logic(&labels, p) && is_logic(&labels, c))
                    .map(|(p, _)| p.clone())
                    .collect();
                return Err(CollapseError::CyclicLogicChain(cycle));
            }
            break;
        };

        let parent_condition = labels[&parent].condition().unwrap().clone();
        let child_condition = labels[&child].condition().unwrap().clone();
        let (merged, found) = substitute(&child_condition, &parent, &parent_condition);
        if !found {
            return Err(CollapseError::UnreferencedLogicParent {
                logic: child,
                parent,
            });
        }
        labels.insert(child.clone(), NodeLabel::logic(merged));

        // The merged node now depends on the parent's parents directly.
        edges.remove(&(parent.clone(), child.clone()));
        let grandparents: Vec<NodeId> = edges
            .iter()
            .filter(|(_, c)| *c == parent)
            .map(|(p, _)| p.clone())
            .collect();
        for gp in grandparents {
            edges.insert((gp, child.clone()));
        }

        // A parent with no remaining children existed only for the chain.
        let parent_spent = !edges.iter().any(|(p, _)| *p == parent);
        if parent_spent {
            edges.retain(|(_, c)| *c != parent);
            labels.remove(&parent);
        }
    }

    let graph = Graph::new(
        labels.into_iter().collect(),
        edges.into_iter().collect(),
    )
    .expect("collapse rewrites a well-formed graph into a well-formed graph");
    Ok(graph)
}
