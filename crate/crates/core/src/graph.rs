//! The key-semantics graph: key instructions as nodes (attributed with their
//! key expressions), edges following the control flow between them, loop
//! breaking via back-edge removal with WHILE marking, and deterministic
//! topological serialization.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asm::{is_cond_branch, is_ret, is_uncond_jump, Cfg, Function};
use crate::keysem::KeyExpr;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyNode {
    pub address: u64,
    pub expr: KeyExpr,
    /// Set on a loop header whose closing back edge was removed.
    pub while_marker: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeySemGraph {
    /// Nodes in instruction address order.
    pub nodes: Vec<KeyNode>,
    pub edges: BTreeSet<(usize, usize)>,
    /// Removed loop-closing edges, kept for diagnostics and DOT dumps.
    pub removed_back_edges: Vec<(usize, usize)>,
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph contains a cycle; break_loops must run before serialization")]
    Cyclic,
}

/// Connect key instructions along the control flow: an edge (a, b) exists
/// iff some CFG path runs from a to b through no other key instruction.
/// The graph may still contain cycles at this stage.
pub fn build_key_semantics_graph(
    f: &Function,
    _cfg: &Cfg,
    keys: &[(u64, KeyExpr)],
) -> KeySemGraph {
    let nodes: Vec<KeyNode> = keys
        .iter()
        .map(|(address, expr)| KeyNode {
            address: *address,
            expr: expr.clone(),
            while_marker: false,
        })
        .collect();
    let node_of_index: std::collections::HashMap<usize, usize> = nodes
        .iter()
        .enumerate()
        .filter_map(|(ni, node)| f.index_of(node.address).map(|ii| (ii, ni)))
        .collect();

    let successors = |idx: usize| -> Vec<usize> {
        let ins = &f.instructions[idx];
        let m = ins.mnemonic.as_str();
        let next = (idx + 1 < f.instructions.len()).then_some(idx + 1);
        let target = ins.label_target().and_then(|t| f.index_of(t));
        if is_ret(m) {
            Vec::new()
        } else if is_uncond_jump(m) {
            target.into_iter().collect()
        } else if is_cond_branch(m) {
            let mut v: Vec<usize> = target.into_iter().chain(next).collect();
            v.sort_unstable();
            v.dedup();
            v
        } else {
            next.into_iter().collect()
        }
    };

    let mut edges = BTreeSet::new();
    for (from_node, node) in nodes.iter().enumerate() {
        let Some(start) = f.index_of(node.address) else {
            continue;
        };
        // Flood forward, stopping at key instructions.
        let mut seen: HashSet<usize> = HashSet::new();
        let mut work: Vec<usize> = successors(start);
        while let Some(idx) = work.pop() {
            if !seen.insert(idx) {
                continue;
            }
            if let Some(&to_node) = node_of_index.get(&idx) {
                edges.insert((from_node, to_node));
                continue;
            }
            work.extend(successors(idx));
        }
    }

    KeySemGraph {
        nodes,
        edges,
        removed_back_edges: Vec::new(),
    }
}

/// Remove every DFS back edge, marking the edge's target node WHILE. The
/// nodes of the loop body are retained; the result is acyclic. Idempotent.
pub fn break_loops(g: &KeySemGraph) -> KeySemGraph {
    let n = g.nodes.len();
    let succs: Vec<Vec<usize>> = {
        let mut v = vec![Vec::new(); n];
        for &(a, b) in &g.edges {
            v[a].push(b);
        }
        v
    };

    // Entry nodes first (no incoming edges), then any unvisited node in
    // address order, so the DFS starts where the flow starts.
    let mut has_pred = vec![false; n];
    for &(_, b) in &g.edges {
        has_pred[b] = true;
    }
    let roots: Vec<usize> = (0..n)
        .filter(|&i| !has_pred[i])
        .chain(0..n)
        .collect();

    #[derive(Clone, Copy, PartialEq)]
    enum Color {
        White,
        Gray,
        Black,
    }
    let mut color = vec![Color::White; n];
    let mut removed: Vec<(usize, usize)> = Vec::new();
    let mut while_marks = vec![false; n];

    for root in roots {
        if color[root] != Color::White {
            continue;
        }
        let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
        color[root] = Color::Gray;
        while let Some(&mut (u, ref mut ci)) = stack.last_mut() {
            if *ci < succs[u].len() {
                let v = succs[u][*ci];
                *ci += 1;
                match color[v] {
                    Color::White => {
                        color[v] = Color::Gray;
                        stack.push((v, 0));
                    }
                    Color::Gray => {
                        removed.push((u, v));
                        while_marks[v] = true;
                    }
                    Color::Black => {}
                }
            } else {
                color[u] = Color::Black;
                stack.pop();
            }
        }
    }

    let removed_set: HashSet<(usize, usize)> = removed.iter().copied().collect();
    KeySemGraph {
        nodes: g
            .nodes
            .iter()
            .enumerate()
            .map(|(i, node)| KeyNode {
                while_marker: node.while_marker || while_marks[i],
                ..node.clone()
            })
            .collect(),
        edges: g
            .edges
            .iter()
            .filter(|e| !removed_set.contains(e))
            .copied()
            .collect(),
        removed_back_edges: {
            let mut all = g.removed_back_edges.clone();
            all.extend(removed);
            all
        },
    }
}

/// Kahn's algorithm with a deterministic tie-break: among ready nodes, the
/// lowest instruction address (= lowest node id) first. Every retained edge
/// ends up forward in the output.
pub fn topo_serialize(g: &KeySemGraph) -> Result<Vec<KeyNode>, GraphError> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;

    let n = g.nodes.len();
    let mut indegree = vec![0usize; n];
    let mut succs: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(a, b) in &g.edges {
        indegree[b] += 1;
        succs[a].push(b);
    }
    let mut ready: BinaryHeap<Reverse<usize>> = (0..n)
        .filter(|&i| indegree[i] == 0)
        .map(Reverse)
        .collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(u)) = ready.pop() {
        order.push(g.nodes[u].clone());
        for &v in &succs[u] {
            indegree[v] -= 1;
            if indegree[v] == 0 {
                ready.push(Reverse(v));
            }
        }
    }
    if order.len() != n {
        return Err(GraphError::Cyclic);
    }
    Ok(order)
}

/// DOT export: node labels are display key expressions, removed back edges
/// print dashed.
pub fn to_dot(g: &KeySemGraph) -> String {
    use std::fmt::Write;
    let mut out = String::from("digraph keysem {\n  node [shape=box];\n");
    for (i, node) in g.nodes.iter().enumerate() {
        let label = format!(
            "{}{:#x}: {}",
            if node.while_marker { "WHILE\\n" } else { "" },
            node.address,
            node.expr
        );
        let _ = writeln!(out, "  n{i} [label=\"{}\"];", label.replace('"', "\\\""));
    }
    for &(a, b) in &g.edges {
        let _ = writeln!(out, "  n{a} -> n{b};");
    }
    for &(a, b) in &g.removed_back_edges {
        let _ = writeln!(out, "  n{a} -> n{b} [style=dashed];");
    }
    out.push_str("}\n");
    out
}
