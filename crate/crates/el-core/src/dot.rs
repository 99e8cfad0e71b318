//! Graphviz export.
//!
//! Renders a graph in DOT format for visual inspection. The rendering is
//! purely cosmetic — nothing here feeds back into execution — and it is
//! deliberately tolerant: even a graph that fails semantic validation
//! can be drawn, which is usually how one debugs it.
//!
//! Shape legend:
//!
//! | element                      | rendering                         |
//! |------------------------------|-----------------------------------|
//! | entry node                   | `house`                           |
//! | goal node                    | `octagon` (`doubleoctagon` if also an entry) |
//! | plain activation             | `ellipse`                         |
//! | guarded effect               | `note`, command in the label      |
//! | logic node                   | `box`, condition in the label     |
//! | loop count                   | `box`, iteration budget in the label |
//! | loop exit                    | `oval`                            |
//! | break node                   | dashed outline                    |
//! | loop re-entry edge           | dashed with `odot` arrowhead      |

use crate::graph::{Graph, NodeKind, NodeLabel, Watchpoint};

/// Renders `g` as a DOT digraph. Output is deterministic: nodes and
/// edges appear in ascending id order.
pub fn to_dot(g: &Graph) -> String {
    let mut out = String::from("digraph el {\n  rankdir=TB;\n  node [fontname=\"Helvetica\"];\n");
    for id in g.node_ids() {
        let label = g.label(id).expect("own id");
        let shape = shape_for(label);
        let mut attrs = format!("shape={shape}, label=\"{}\"", escape(&node_text(id, label)));
        if label.is_break() {
            attrs.push_str(", style=dashed");
        }
        out.push_str(&format!("  \"{}\" [{attrs}];\n", escape(id.as_str())));
    }
    for (parent, child) in g.edges() {
        let re_entry = g.label(parent).expect("own id").kind() == NodeKind::LoopCount
            && g.label(child).expect("own id").kind() != NodeKind::LoopExit;
        let suffix = if re_entry {
            " [style=dashed, arrowhead=odot]"
        } else {
            ""
        };
        out.push_str(&format!(
            "  \"{}\" -> \"{}\"{suffix};\n",
            escape(parent.as_str()),
            escape(child.as_str())
        ));
    }
    out.push_str("}\n");
    out
}

fn shape_for(label: &NodeLabel) -> &'static str {
    match label.kind() {
        NodeKind::Activation => match (label.is_entry(), label.is_goal()) {
            (true, true) => "doubleoctagon",
            (true, false) => "house",
            (false, true) => "octagon",
            (false, false) => "ellipse",
        },
        NodeKind::GuardedEffect => "note",
        NodeKind::Logic | NodeKind::LoopCount => "box",
        NodeKind::LoopExit => "oval",
    }
}

fn node_text(id: &crate::graph::NodeId, label: &NodeLabel) -> String {
    let mut text = id.to_string();
    if let Some(Watchpoint::Atom(atom)) = label.watchpoint() {
        text.push_str(&format!("\n@ {atom}"));
    }
    if let Some(effect) = label.effect() {
        if !effect.is_noop() {
            text.push_str(&format!("\n! {}", clip(effect.command(), 40)));
        }
    }
    if let Some(cond) = label.condition() {
        text.push_str(&format!("\n{}", clip(&cond.render(), 60)));
    }
    if let Some(count) = label.loop_count_initial() {
        if count < 0 {
            text.push_str("\nrepeat forever");
        } else {
            text.push_str(&format!("\nrepeat +{count}"));
        }
    }
    text
}

fn clip(s: &str, max_chars: usize) -> String {
    if s.chars().count() <= max_chars {
        return s.to_string();
    }
    let mut clipped: String = s.chars().take(max_chars).collect();
    clipped.push('…');
    clipped
}

fn escape(s: &str) -> String {
    // `\n` inside labels must survive as the DOT line-break escape, so
    // only quotes and backslashes from the source text are escaped.
    s.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', "\\n")
}
