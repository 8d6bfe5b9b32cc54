//! Structural validation of a parsed graph.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::graph::{NodeKind, TreatmentGraph};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "finding", rename_all = "snake_case")]
pub enum Finding {
    /// No path from the entry reaches this node.
    Unreachable { node: String },
    /// Decision node with fewer than two outgoing edges.
    DanglingDecision { node: String, out_degree: usize },
    /// Terminal node with outgoing edges.
    TerminalHasEdges { node: String, out_degree: usize },
    /// Non-terminal node without outgoing edges.
    DeadEnd { node: String },
}

impl std::fmt::Display for Finding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Finding::Unreachable { node } => write!(f, "unreachable node `{node}`"),
            Finding::DanglingDecision { node, out_degree } => {
                write!(f, "decision node `{node}` has {out_degree} outgoing edge(s), needs >= 2")
            }
            Finding::TerminalHasEdges { node, out_degree } => {
                write!(f, "terminal node `{node}` has {out_degree} outgoing edge(s)")
            }
            Finding::DeadEnd { node } => write!(f, "non-terminal node `{node}` has no outgoing edge"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub graph_id: String,
    pub fully_connected: bool,
    /// Unreachable node ids, in declaration order.
    pub unreachable: Vec<String>,
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }
}

pub fn validate_graph(g: &TreatmentGraph) -> ValidationReport {
    let n = g.nodes().len();
    let mut reached = vec![false; n];
    let entry = g.node_index(g.entry()).expect("entry checked at parse time");
    let mut queue = VecDeque::from([entry]);
    reached[entry] = true;
    while let Some(node) = queue.pop_front() {
        for next in g.successors(node) {
            if !reached[next] {
                reached[next] = true;
                queue.push_back(next);
            }
        }
    }

    let mut unreachable = Vec::new();
    let mut findings = Vec::new();
    for (i, node) in g.nodes().iter().enumerate() {
        if !reached[i] {
            unreachable.push(node.id.clone());
            findings.push(Finding::Unreachable { node: node.id.clone() });
        }
        let out_degree = g.out_degree(i);
        match node.kind {
            NodeKind::Decision if out_degree < 2 => findings.push(Finding::DanglingDecision {
                node: node.id.clone(),
                out_degree,
            }),
            NodeKind::Terminal if out_degree > 0 => findings.push(Finding::TerminalHasEdges {
                node: node.id.clone(),
                out_degree,
            }),
            NodeKind::Action | NodeKind::Medication if out_degree == 0 => {
                findings.push(Finding::DeadEnd { node: node.id.clone() })
            }
            _ => {}
        }
    }

    ValidationReport {
        graph_id: g.id().to_string(),
        fully_connected: unreachable.is_empty(),
        unreachable,
        findings,
    }
}
