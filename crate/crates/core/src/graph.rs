//! Treatment-graph data model and its JSON document format.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::catalog::VitalKind;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("edge references undeclared node `{0}`")]
    MissingNode(String),
    #[error("duplicate node id `{0}`")]
    DuplicateId(String),
    #[error("entry node `{0}` does not exist")]
    MissingEntry(String),
    #[error("duplicate edge {from} -> {to} ({label})")]
    DuplicateEdge { from: String, to: String, label: EdgeLabel },
    #[error("node `{node}`: {reason}")]
    InvalidNode { node: String, reason: String },
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// What a requirement is used for on its node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Display,
    Decision,
    Dosage,
}

/// A node's demand for one vital, with optional inclusive bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VitalRequirement {
    pub kind: VitalKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    pub purpose: Purpose,
}

impl VitalRequirement {
    pub fn new(
        kind: VitalKind,
        min: Option<f64>,
        max: Option<f64>,
        purpose: Purpose,
    ) -> Result<Self, String> {
        let req = VitalRequirement { kind, min, max, purpose };
        req.check()?;
        Ok(req)
    }

    pub fn display(kind: VitalKind) -> Self {
        VitalRequirement { kind, min: None, max: None, purpose: Purpose::Display }
    }

    fn check(&self) -> Result<(), String> {
        for bound in [self.min, self.max].into_iter().flatten() {
            if !bound.is_finite() {
                return Err(format!("{}: bound must be finite", self.kind));
            }
        }
        if let (Some(lo), Some(hi)) = (self.min, self.max) {
            if lo > hi {
                return Err(format!("{}: min {lo} exceeds max {hi}", self.kind));
            }
        }
        if self.purpose == Purpose::Decision && self.min.is_none() && self.max.is_none() {
            return Err(format!("{}: decision requirement needs a bound", self.kind));
        }
        Ok(())
    }

    pub fn has_bounds(&self) -> bool {
        self.min.is_some() || self.max.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Action,
    Decision,
    Medication,
    Terminal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreatmentNode {
    pub id: String,
    pub kind: NodeKind,
    pub text: String,
    #[serde(default)]
    pub requirements: Vec<VitalRequirement>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dosage_rule_id: Option<String>,
}

/// Edge label. Serialized as `next`, `yes`, `no` or `branch:<name>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeLabel {
    Next,
    Yes,
    No,
    Branch(String),
}

impl fmt::Display for EdgeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EdgeLabel::Next => f.write_str("next"),
            EdgeLabel::Yes => f.write_str("yes"),
            EdgeLabel::No => f.write_str("no"),
            EdgeLabel::Branch(name) => write!(f, "branch:{name}"),
        }
    }
}

impl FromStr for EdgeLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "next" => Ok(EdgeLabel::Next),
            "yes" => Ok(EdgeLabel::Yes),
            "no" => Ok(EdgeLabel::No),
            other => match other.strip_prefix("branch:") {
                Some(name) if !name.is_empty() => Ok(EdgeLabel::Branch(name.to_string())),
                _ => Err(format!("invalid edge label `{other}`")),
            },
        }
    }
}

impl Serialize for EdgeLabel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EdgeLabel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreatmentEdge {
    pub from: String,
    pub to: String,
    pub label: EdgeLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    TreatmentPath,
    StandardProcedure,
}

/// On-disk shape of a graph document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDocument {
    pub id: String,
    pub title: String,
    pub kind: GraphKind,
    pub entry: String,
    pub nodes: Vec<TreatmentNode>,
    pub edges: Vec<TreatmentEdge>,
}

/// An immutable, validated treatment graph with an id index and adjacency
/// lists in declared edge order.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "GraphDocument", into = "GraphDocument")]
pub struct TreatmentGraph {
    id: String,
    title: String,
    kind: GraphKind,
    entry: String,
    nodes: Vec<TreatmentNode>,
    edges: Vec<TreatmentEdge>,
    index: HashMap<String, usize>,
    outgoing: Vec<Vec<usize>>,
}

impl PartialEq for TreatmentGraph {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
            && self.title == other.title
            && self.kind == other.kind
            && self.entry == other.entry
            && self.nodes == other.nodes
            && self.edges == other.edges
    }
}

impl TryFrom<GraphDocument> for TreatmentGraph {
    type Error = GraphError;

    fn try_from(doc: GraphDocument) -> Result<Self, Self::Error> {
        let mut index = HashMap::with_capacity(doc.nodes.len());
        for (i, node) in doc.nodes.iter().enumerate() {
            if index.insert(node.id.clone(), i).is_some() {
                return Err(GraphError::DuplicateId(node.id.clone()));
            }
            for req in &node.requirements {
                req.check().map_err(|reason| GraphError::InvalidNode {
                    node: node.id.clone(),
                    reason,
                })?;
            }
            let is_medication = node.kind == NodeKind::Medication;
            if is_medication != node.dosage_rule_id.is_some() {
                return Err(GraphError::InvalidNode {
                    node: node.id.clone(),
                    reason: "dosage_rule_id must be present exactly on medication nodes".into(),
                });
            }
        }
        if !index.contains_key(&doc.entry) {
            return Err(GraphError::MissingEntry(doc.entry));
        }
        let mut outgoing = vec![Vec::new(); doc.nodes.len()];
        let mut seen = HashSet::new();
        for (i, edge) in doc.edges.iter().enumerate() {
            let from = *index
                .get(&edge.from)
                .ok_or_else(|| GraphError::MissingNode(edge.from.clone()))?;
            if !index.contains_key(&edge.to) {
                return Err(GraphError::MissingNode(edge.to.clone()));
            }
            if !seen.insert((&edge.from, &edge.to, &edge.label)) {
                return Err(GraphError::DuplicateEdge {
                    from: edge.from.clone(),
                    to: edge.to.clone(),
                    label: edge.label.clone(),
                });
            }
            outgoing[from].push(i);
        }
        Ok(TreatmentGraph {
            id: doc.id,
            title: doc.title,
            kind: doc.kind,
            entry: doc.entry,
            nodes: doc.nodes,
            edges: doc.edges,
            index,
            outgoing,
        })
    }
}

impl From<TreatmentGraph> for GraphDocument {
    fn from(g: TreatmentGraph) -> Self {
        GraphDocument {
            id: g.id,
            title: g.title,
            kind: g.kind,
            entry: g.entry,
            nodes: g.nodes,
            edges: g.edges,
        }
    }
}

/// Parses one graph document.
pub fn parse_graph(document: &str) -> Result<TreatmentGraph, GraphError> {
    let doc: GraphDocument =
        serde_json::from_str(document).map_err(|e| GraphError::Syntax(e.to_string()))?;
    TreatmentGraph::try_from(doc)
}

pub fn serialize_graph(graph: &TreatmentGraph) -> String {
    serde_json::to_string_pretty(graph).expect("graph serialization is infallible")
}

pub fn load_graph(path: &Path) -> Result<TreatmentGraph, GraphError> {
    let text = std::fs::read_to_string(path).map_err(|e| GraphError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_graph(&text)
}

/// Loads every `*.json` graph in `dir`, sorted by file name.
pub fn load_corpus(dir: &Path) -> Result<Vec<TreatmentGraph>, GraphError> {
    let io = |e: std::io::Error| GraphError::Io {
        path: dir.display().to_string(),
        message: e.to_string(),
    };
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.extension().is_some_and(|ext| ext == "json") {
            paths.push(path);
        }
    }
    paths.sort();
    paths.iter().map(|p| load_graph(p)).collect()
}

impl TreatmentGraph {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn title(&self) -> &str {
        &self.title
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    pub fn entry(&self) -> &str {
        &self.entry
    }

    pub fn nodes(&self) -> &[TreatmentNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[TreatmentEdge] {
        &self.edges
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn lookup_node(&self, id: &str) -> Result<&TreatmentNode, GraphError> {
        self.index
            .get(id)
            .map(|&i| &self.nodes[i])
            .ok_or_else(|| GraphError::UnknownNode(id.to_string()))
    }

    /// Edges leaving `id`, in declared order.
    pub fn outgoing_edges(&self, id: &str) -> Result<Vec<&TreatmentEdge>, GraphError> {
        let i = *self
            .index
            .get(id)
            .ok_or_else(|| GraphError::UnknownNode(id.to_string()))?;
        Ok(self.outgoing[i].iter().map(|&e| &self.edges[e]).collect())
    }

    pub fn follow(&self, from: &str, label: &EdgeLabel) -> Option<&TreatmentEdge> {
        let i = *self.index.get(from)?;
        self.outgoing[i]
            .iter()
            .map(|&e| &self.edges[e])
            .find(|e| &e.label == label)
    }

    pub(crate) fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub(crate) fn successors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.outgoing[node].iter().map(|&e| self.index[&self.edges[e].to])
    }

    pub(crate) fn out_degree(&self, node: usize) -> usize {
        self.outgoing[node].len()
    }
}
