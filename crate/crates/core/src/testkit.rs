//! Seeded generators and brute-force oracles shared by property tests and
//! the acceptance suite. Oracles deliberately avoid the library's own
//! indexes and algorithms: they work on the serialized document.

use std::collections::{BTreeMap, BTreeSet};

use rand::rngs::StdRng;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use serde_json::Value;

use crate::alarm::{AlarmId, AlarmState, OperatorVerdict, VerdictDecision};
use crate::catalog::{SourceClass, VitalKind};
use crate::engine::Engine;
use crate::graph::{
    parse_graph, serialize_graph, EdgeLabel, GraphDocument, GraphKind, NodeKind, Purpose, TreatmentEdge,
    TreatmentGraph, TreatmentNode, VitalRequirement,
};
use crate::navigator::SessionId;
use crate::store::VitalReading;
use crate::wire::{DeviceMessage, TraceEntry, TraceFile};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

/// Value inside the physical range of `kind`, on a 0.5 grid.
pub fn value_for(rng: &mut impl Rng, kind: VitalKind) -> f64 {
    let (lo, hi) = kind.physical_range();
    let steps = ((hi - lo) * 2.0) as u64;
    lo + rng.random_range(0..=steps) as f64 / 2.0
}

pub fn random_kind(rng: &mut impl Rng) -> VitalKind {
    *VitalKind::ALL.choose(rng).expect("catalog is non-empty")
}

pub fn measurement_kinds() -> Vec<VitalKind> {
    VitalKind::ALL.iter().copied().filter(|k| k.source_class() == SourceClass::Measurement).collect()
}

/// Bounds inside the physical range; at least one side when `bounded`.
fn random_bounds(rng: &mut impl Rng, kind: VitalKind, bounded: bool) -> (Option<f64>, Option<f64>) {
    let a = value_for(rng, kind);
    let b = value_for(rng, kind);
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    match rng.random_range(0..if bounded { 3 } else { 4 }) {
        0 => (Some(lo), None),
        1 => (None, Some(hi)),
        2 => (Some(lo), Some(hi)),
        _ => (None, None),
    }
}

pub fn random_requirement(rng: &mut impl Rng, purpose: Purpose) -> VitalRequirement {
    let kind = random_kind(rng);
    let (min, max) = random_bounds(rng, kind, purpose == Purpose::Decision);
    VitalRequirement { kind, min, max, purpose }
}

fn node(id: String, kind: NodeKind, requirements: Vec<VitalRequirement>) -> TreatmentNode {
    let dosage_rule_id = (kind == NodeKind::Medication).then(|| "rule".to_string());
    TreatmentNode { text: format!("step {id}"), id, kind, requirements, dosage_rule_id }
}

fn build(id: &str, kind: GraphKind, nodes: Vec<TreatmentNode>, edges: Vec<TreatmentEdge>) -> TreatmentGraph {
    let doc = GraphDocument {
        id: id.into(),
        title: format!("graph {id}"),
        kind,
        entry: nodes[0].id.clone(),
        nodes,
        edges,
    };
    let text = serde_json::to_string(&doc).expect("document serializes");
    parse_graph(&text).expect("generated graphs are well formed")
}

/// Arbitrary well-formed graph: random node kinds, random requirements and
/// random edges, so it may be disconnected, cyclic or structurally odd.
pub fn random_graph(rng: &mut impl Rng, id: &str, max_nodes: usize) -> TreatmentGraph {
    let n = rng.random_range(1..=max_nodes.max(1));
    let kinds = [NodeKind::Action, NodeKind::Decision, NodeKind::Medication, NodeKind::Terminal];
    let nodes: Vec<_> = (0..n)
        .map(|i| {
            let kind = *kinds.choose(rng).expect("non-empty");
            let count = rng.random_range(0..=3);
            let reqs = (0..count)
                .map(|_| {
                    let purpose = *[Purpose::Display, Purpose::Decision, Purpose::Dosage].choose(rng).expect("non-empty");
                    random_requirement(rng, purpose)
                })
                .collect();
            node(format!("n{i}"), kind, reqs)
        })
        .collect();
    let density = rng.random_range(0.0..2.0);
    let edge_count = (n as f64 * density) as usize;
    let labels = [EdgeLabel::Next, EdgeLabel::Yes, EdgeLabel::No, EdgeLabel::Branch("alt".into())];
    let mut seen = BTreeSet::new();
    let mut edges = Vec::new();
    for _ in 0..edge_count {
        let from = format!("n{}", rng.random_range(0..n));
        let to = format!("n{}", rng.random_range(0..n));
        let label = labels.choose(rng).expect("non-empty").clone();
        if seen.insert((from.clone(), to.clone(), label.clone())) {
            edges.push(TreatmentEdge { from, to, label });
        }
    }
    let kind = if rng.random_bool(0.5) { GraphKind::TreatmentPath } else { GraphKind::StandardProcedure };
    build(id, kind, nodes, edges)
}

pub fn random_corpus(rng: &mut impl Rng, max_graphs: usize, max_nodes: usize) -> Vec<TreatmentGraph> {
    let count = rng.random_range(0..=max_graphs);
    (0..count).map(|i| random_graph(rng, &format!("g{i}"), max_nodes)).collect()
}

/// Graph that passes validation: node `i` always links to `i + 1`, the last
/// node is terminal, decision nodes carry one bounded decision requirement
/// on a measurement kind with `yes` and `no` edges, and action nodes may
/// loop back.
pub fn navigable_graph(rng: &mut impl Rng, id: &str, max_nodes: usize) -> TreatmentGraph {
    let n = rng.random_range(2..=max_nodes.max(2));
    let measurements = measurement_kinds();
    let mut nodes = Vec::with_capacity(n);
    let mut edges = Vec::new();
    let edge = |from: usize, to: usize, label: EdgeLabel| TreatmentEdge {
        from: format!("n{from}"),
        to: format!("n{to}"),
        label,
    };
    for i in 0..n {
        if i == n - 1 {
            nodes.push(node(format!("n{i}"), NodeKind::Terminal, vec![]));
            break;
        }
        let mut reqs: Vec<_> = (0..rng.random_range(0..=2))
            .map(|_| random_requirement(rng, Purpose::Display))
            .collect();
        let kind = match rng.random_range(0..10) {
            0..=4 => NodeKind::Decision,
            5 => NodeKind::Medication,
            _ => NodeKind::Action,
        };
        match kind {
            NodeKind::Decision => {
                let vital = *measurements.choose(rng).expect("non-empty");
                let (min, max) = random_bounds(rng, vital, true);
                reqs.insert(rng.random_range(0..=reqs.len()), VitalRequirement { kind: vital, min, max, purpose: Purpose::Decision });
                let other = rng.random_range(i + 1..n);
                let (yes, no) = if rng.random_bool(0.5) { (i + 1, other) } else { (other, i + 1) };
                edges.push(edge(i, yes, EdgeLabel::Yes));
                edges.push(edge(i, no, EdgeLabel::No));
            }
            NodeKind::Medication => {
                reqs.push(VitalRequirement::display(VitalKind::Weight));
                edges.push(edge(i, i + 1, EdgeLabel::Next));
            }
            _ => {
                edges.push(edge(i, i + 1, EdgeLabel::Next));
                if i > 0 && rng.random_bool(0.2) {
                    edges.push(edge(i, rng.random_range(0..i), EdgeLabel::Branch("repeat".into())));
                }
            }
        }
        nodes.push(node(format!("n{i}"), kind, reqs));
    }
    build(id, GraphKind::TreatmentPath, nodes, edges)
}

/// Trace with non-decreasing offsets; message timestamps equal offsets.
pub fn random_trace(rng: &mut impl Rng, max_len: usize) -> TraceFile {
    let len = rng.random_range(0..=max_len);
    let kinds = measurement_kinds();
    let mut offset = 0;
    let entries = (0..len)
        .map(|_| {
            offset += rng.random_range(0..=2_000);
            let kind = *kinds.choose(rng).expect("non-empty");
            let message = DeviceMessage {
                device: format!("dev-{}", rng.random_range(0..3)),
                kind,
                value: value_for(rng, kind),
                timestamp: offset,
            };
            TraceEntry { offset_ms: offset, message }
        })
        .collect();
    TraceFile::new(entries).expect("offsets are non-decreasing")
}

/// One step of a randomized engine interleaving.
#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Start,
    Advance { session: u64, pick: usize },
    Undo { session: u64 },
    Verdict { session: u64, pick: usize, accept: bool },
    Ingest(VitalReading),
    Entry { kind: VitalKind, value: f64 },
    ResolveAlarm { pick: usize, dismiss: bool },
    Tick(u64),
}

/// Random interleaving over `graph`. Readings target the kinds the graph
/// asks for so automation and alarms actually trigger.
pub fn random_ops(rng: &mut impl Rng, graph: &TreatmentGraph, len: usize) -> Vec<Op> {
    let mut kinds: Vec<VitalKind> = graph
        .nodes()
        .iter()
        .flat_map(|n| n.requirements.iter().map(|r| r.kind))
        .filter(|k| k.source_class() == SourceClass::Measurement)
        .collect();
    kinds.push(VitalKind::Spo2);
    let entries: Vec<VitalKind> =
        VitalKind::ALL.iter().copied().filter(|k| k.source_class() == SourceClass::DatabaseEntry).collect();
    let mut ops = vec![Op::Start];
    let mut t: u64 = 0;
    for _ in 0..len {
        let sessions = ops.iter().filter(|o| **o == Op::Start).count() as u64;
        let session = rng.random_range(1..=sessions);
        let op = match rng.random_range(0..20) {
            0 => Op::Start,
            1..=5 => Op::Advance { session, pick: rng.random_range(0..4) },
            6 | 7 => Op::Undo { session },
            8 => Op::Verdict { session, pick: rng.random_range(0..4), accept: rng.random_bool(0.5) },
            9..=14 => {
                let kind = *kinds.choose(rng).expect("non-empty");
                // a small share of readings are older than the latest
                let ts = if rng.random_bool(0.1) { t.saturating_sub(rng.random_range(0..5_000)) } else { t };
                Op::Ingest(VitalReading::new(kind, value_for(rng, kind), ts, "dev"))
            }
            15 => {
                let kind = *entries.choose(rng).expect("non-empty");
                Op::Entry { kind, value: value_for(rng, kind) }
            }
            16 | 17 => Op::ResolveAlarm { pick: rng.random_range(0..4), dismiss: rng.random_bool(0.7) },
            _ => {
                t += rng.random_range(1..120_000);
                Op::Tick(t)
            }
        };
        ops.push(op);
    }
    ops
}

/// Applies `op` at time `now`; invalid commands are expected and ignored.
/// Returns the new time.
pub fn apply_op(engine: &mut Engine, graph_id: &str, op: &Op, now: u64) -> u64 {
    match op {
        Op::Start => {
            let _ = engine.start_session(graph_id, now);
        }
        Op::Advance { session, pick } => {
            let id = SessionId(*session);
            let labels: Vec<EdgeLabel> = match engine.session(id) {
                Ok(s) => s
                    .graph()
                    .outgoing_edges(s.current())
                    .map(|es| es.into_iter().map(|e| e.label.clone()).collect())
                    .unwrap_or_default(),
                Err(_) => return now,
            };
            let label = labels.get(*pick).cloned().unwrap_or(EdgeLabel::Branch("none".into()));
            let _ = engine.advance(id, &label, now);
        }
        Op::Undo { session } => {
            let _ = engine.undo(SessionId(*session), now);
        }
        Op::Verdict { session, pick, accept } => {
            let id = SessionId(*session);
            let kind = match engine.session(id) {
                Ok(s) => s.current_node().requirements.get(*pick).map(|r| r.kind),
                Err(_) => None,
            };
            if let Some(kind) = kind {
                let _ = engine.record_verdict(id, kind, *accept, now);
            }
        }
        Op::Ingest(reading) => {
            let _ = engine.ingest(reading.clone(), now);
        }
        Op::Entry { kind, value } => {
            let _ = engine.set_database_entry(*kind, *value, now, now);
        }
        Op::ResolveAlarm { pick, dismiss } => {
            let open: Vec<AlarmId> = engine.list_alarms(Some(AlarmState::Open)).iter().map(|a| a.id).collect();
            if let Some(&id) = open.get(*pick) {
                let verdict = if *dismiss {
                    OperatorVerdict::dismiss(now)
                } else {
                    let target = engine
                        .list_alarms(None)
                        .iter()
                        .find(|a| a.id == id)
                        .and_then(|a| a.session)
                        .and_then(|s| engine.session(s).ok())
                        .map(|s| s.graph().entry().to_string());
                    OperatorVerdict { decision: VerdictDecision::AcceptChange, target, timestamp: now }
                };
                let _ = engine.resolve_alarm(id, verdict, now);
            }
        }
        Op::Tick(t) => return now.max(*t),
    }
    now
}

pub mod oracle {
    //! Independent reference computations.

    use super::*;

    /// Per-kind requirement counts, graphs needing vitals per graph kind as
    /// `(total, needing)`, scanned from the JSON document.
    #[derive(Debug, Clone, PartialEq, Default)]
    pub struct Tally {
        pub counts: BTreeMap<String, usize>,
        pub treatment_paths: (usize, usize),
        pub standard_procedures: (usize, usize),
    }

    pub fn occurrence_tally(corpus: &[TreatmentGraph]) -> Tally {
        let mut tally = Tally::default();
        for graph in corpus {
            let doc: Value = serde_json::from_str(&serialize_graph(graph)).expect("graph serializes");
            let mut needs = false;
            for node in doc["nodes"].as_array().expect("nodes array") {
                if let Some(reqs) = node.get("requirements").and_then(Value::as_array) {
                    for req in reqs {
                        needs = true;
                        let kind = req["kind"].as_str().expect("kind string").to_string();
                        *tally.counts.entry(kind).or_insert(0) += 1;
                    }
                }
            }
            let slot = match doc["kind"].as_str() {
                Some("treatment_path") => &mut tally.treatment_paths,
                _ => &mut tally.standard_procedures,
            };
            slot.0 += 1;
            slot.1 += usize::from(needs);
        }
        tally
    }

    /// Node ids reachable from the entry, by fixed-point iteration over the
    /// raw edge list.
    pub fn reachable(graph: &TreatmentGraph) -> BTreeSet<String> {
        let doc: Value = serde_json::from_str(&serialize_graph(graph)).expect("graph serializes");
        let mut seen = BTreeSet::from([doc["entry"].as_str().expect("entry").to_string()]);
        loop {
            let before = seen.len();
            for e in doc["edges"].as_array().expect("edges array") {
                if seen.contains(e["from"].as_str().expect("from")) {
                    seen.insert(e["to"].as_str().expect("to").to_string());
                }
            }
            if seen.len() == before {
                return seen;
            }
        }
    }

    pub fn all_ids(graph: &TreatmentGraph) -> BTreeSet<String> {
        graph.nodes().iter().map(|n| n.id.clone()).collect()
    }

    /// Half-away-from-zero rounding of `rate * weight` to `increment`, with
    /// rate in hundredths, weight in tenths and the increment a multiple of
    /// 0.25 given in quarters. Exact integer arithmetic.
    pub fn per_kg_dose(rate_centi: u64, weight_deci: u64, increment_quarters: u64) -> f64 {
        // dose = rc * wd / 1000; steps = dose / (iq / 4) = 4 rc wd / (1000 iq)
        let num = 4 * rate_centi * weight_deci;
        let den = 1000 * increment_quarters;
        let steps = (2 * num + den) / (2 * den);
        steps as f64 * (increment_quarters as f64 / 4.0)
    }

    /// Folds readings the way the store contract describes: latest is the
    /// maximum timestamp, later arrivals win ties, and identical readings
    /// count once.
    pub fn fold_latest(readings: &[VitalReading]) -> BTreeMap<VitalKind, VitalReading> {
        let mut latest: BTreeMap<VitalKind, VitalReading> = BTreeMap::new();
        let mut seen: Vec<&VitalReading> = Vec::new();
        for r in readings {
            if !r.kind.accepts(r.value) {
                continue;
            }
            let dup = seen.iter().any(|s| {
                s.kind == r.kind && s.value.to_bits() == r.value.to_bits() && s.timestamp == r.timestamp && s.origin == r.origin
            });
            if dup {
                continue;
            }
            seen.push(r);
            if latest.get(&r.kind).is_none_or(|cur| r.timestamp >= cur.timestamp) {
                latest.insert(r.kind, r.clone());
            }
        }
        latest
    }
}
