//! Session state machine over a treatment graph.
//!
//! A session serves step views with every requirement of the current node
//! resolved against the vital store, moves along edges on operator command,
//! takes clearly decided branches on its own, and can undo any advance. Every
//! movement and verdict is appended to the session's audit trail, and the
//! trail alone is enough to rebuild the session (see [`Session::restore`]).

pub mod audit;
pub mod range;

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::alarm::{AlarmId, VerdictDecision};
use crate::catalog::VitalKind;
use crate::dosage::{compute_dosage, DosageError, DosageResult, DosageRuleSet};
use crate::graph::{EdgeLabel, NodeKind, Purpose, TreatmentGraph, TreatmentNode, VitalRequirement};
use crate::store::{Freshness, ReadingKey, VitalReading, VitalStore};
use crate::validate::{validate_graph, Finding};

pub use audit::{AuditAction, AuditEvent};
pub use range::{clearance, evaluate_range, ClearMargin, Clearance, Direction, RangeStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(pub u64);

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum NavError {
    #[error("graph `{graph}` failed validation: {findings:?}")]
    InvalidGraph { graph: String, findings: Vec<Finding> },
    #[error("`{choice}` is not a choice at `{node}` (available: {available:?})")]
    InvalidChoice { node: String, choice: String, available: Vec<String> },
    #[error("`{node}` is a terminal node")]
    TerminalReached { node: String },
    #[error("nothing to undo")]
    NothingToUndo,
    #[error("node `{node}` has no requirement for {kind}")]
    UnknownRequirement { node: String, kind: VitalKind },
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("audit event {seq} cannot be replayed: {reason}")]
    ReplayMismatch { seq: u64, reason: String },
}

impl NavError {
    pub fn code(&self) -> &'static str {
        match self {
            NavError::InvalidGraph { .. } => "invalid_graph",
            NavError::InvalidChoice { .. } => "invalid_choice",
            NavError::TerminalReached { .. } => "terminal_reached",
            NavError::NothingToUndo => "nothing_to_undo",
            NavError::UnknownRequirement { .. } => "unknown_requirement",
            NavError::UnknownNode(_) => "unknown_node",
            NavError::ReplayMismatch { .. } => "replay_mismatch",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cause {
    Manual,
    Automated,
}

/// A node the session has left, and how it left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub node: String,
    pub cause: Cause,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Known {
        value: f64,
        timestamp: u64,
        origin: String,
        freshness: Freshness,
        range: RangeStatus,
        declined: bool,
    },
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedVital {
    pub requirement: VitalRequirement,
    pub outcome: Outcome,
}

/// Shown while the session sits on a node it reached automatically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingAuto {
    pub seq: u64,
    pub from: String,
    pub choice: EdgeLabel,
    pub kind: VitalKind,
    pub value: f64,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum DosageOutcome {
    Computed(DosageResult),
    Unavailable(DosageError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepView {
    pub session: SessionId,
    pub graph_id: String,
    pub node_id: String,
    pub kind: NodeKind,
    pub text: String,
    /// In requirement declaration order.
    pub resolved: Vec<ResolvedVital>,
    pub choices: Vec<EdgeLabel>,
    pub pending_auto: Option<PendingAuto>,
    pub dosage: Option<DosageOutcome>,
    pub can_undo: bool,
    pub at: u64,
}

#[derive(Debug, Clone, Default)]
pub struct SessionOptions {
    pub margin: ClearMargin,
    pub rules: Arc<DosageRuleSet>,
}

/// Auto-decide stays off on `node` while the latest reading of `kind` is
/// still `reading`.
#[derive(Debug, Clone, PartialEq)]
struct Suppression {
    node: String,
    kind: VitalKind,
    reading: ReadingKey,
}

#[derive(Debug, Clone)]
pub struct Session {
    id: SessionId,
    graph: Arc<TreatmentGraph>,
    options: SessionOptions,
    current: String,
    history: Vec<Step>,
    audit: Vec<AuditEvent>,
    quarantined: HashSet<ReadingKey>,
    suppression: Option<Suppression>,
}

impl Session {
    pub fn start(id: SessionId, graph: Arc<TreatmentGraph>, options: SessionOptions) -> Result<Self, NavError> {
        let report = validate_graph(&graph);
        if !report.is_clean() {
            return Err(NavError::InvalidGraph { graph: graph.id().to_string(), findings: report.findings });
        }
        Ok(Session {
            id,
            current: graph.entry().to_string(),
            graph,
            options,
            history: Vec::new(),
            audit: Vec::new(),
            quarantined: HashSet::new(),
            suppression: None,
        })
    }

    /// Rebuilds a session by applying `events` to a fresh start.
    pub fn restore(
        id: SessionId,
        graph: Arc<TreatmentGraph>,
        options: SessionOptions,
        events: impl IntoIterator<Item = AuditEvent>,
    ) -> Result<Self, NavError> {
        let mut session = Session::start(id, graph, options)?;
        for event in events {
            session.apply_event(event)?;
        }
        Ok(session)
    }

    pub fn id(&self) -> SessionId {
        self.id
    }

    pub fn graph(&self) -> &Arc<TreatmentGraph> {
        &self.graph
    }

    pub fn current(&self) -> &str {
        &self.current
    }

    pub fn current_node(&self) -> &TreatmentNode {
        self.graph.lookup_node(&self.current).expect("current is always a graph node")
    }

    pub fn history(&self) -> &[Step] {
        &self.history
    }

    pub fn audit(&self) -> &[AuditEvent] {
        &self.audit
    }

    pub fn margin(&self) -> ClearMargin {
        self.options.margin
    }

    pub fn rules(&self) -> &Arc<DosageRuleSet> {
        &self.options.rules
    }

    fn next_seq(&self) -> u64 {
        self.audit.last().map_or(1, |e| e.seq + 1)
    }

    fn record(&mut self, timestamp: u64, action: AuditAction) -> &AuditEvent {
        let event = AuditEvent { seq: self.next_seq(), timestamp, node: self.current.clone(), action };
        self.apply_event(event).expect("recorded events are consistent with the session");
        self.audit.last().expect("just appended")
    }

    /// Applies one recorded event to the state and appends it to the trail.
    pub fn apply_event(&mut self, event: AuditEvent) -> Result<(), NavError> {
        let mismatch = |reason: String| NavError::ReplayMismatch { seq: event.seq, reason };
        if event.seq != self.next_seq() {
            return Err(mismatch(format!("expected seq {}", self.next_seq())));
        }
        if event.node != self.current {
            return Err(mismatch(format!("event at `{}` but session is at `{}`", event.node, self.current)));
        }
        match &event.action {
            AuditAction::ManualAdvance { choice, to } => {
                match choice {
                    Some(label) => {
                        let edge = self
                            .graph
                            .follow(&self.current, label)
                            .ok_or_else(|| mismatch(format!("no `{label}` edge")))?;
                        if &edge.to != to {
                            return Err(mismatch(format!("`{label}` leads to `{}`", edge.to)));
                        }
                    }
                    None if !self.graph.contains(to) => {
                        return Err(mismatch(format!("unknown jump target `{to}`")));
                    }
                    None => {}
                }
                self.history.push(Step { node: self.current.clone(), cause: Cause::Manual, seq: event.seq });
                self.current = to.clone();
            }
            AuditAction::AutoAdvance { choice, to, .. } => {
                let edge = self
                    .graph
                    .follow(&self.current, choice)
                    .ok_or_else(|| mismatch(format!("no `{choice}` edge")))?;
                if &edge.to != to {
                    return Err(mismatch(format!("`{choice}` leads to `{}`", edge.to)));
                }
                self.history.push(Step { node: self.current.clone(), cause: Cause::Automated, seq: event.seq });
                self.current = to.clone();
            }
            AuditAction::Undo { reverted_seq, restored } => {
                let step = self.history.last().ok_or_else(|| mismatch("nothing to undo".into()))?;
                if step.seq != *reverted_seq || &step.node != restored {
                    return Err(mismatch(format!("top of history is event {} at `{}`", step.seq, step.node)));
                }
                let step = self.history.pop().expect("checked above");
                self.suppression = None;
                if step.cause == Cause::Automated {
                    let reverted = self.audit.iter().find(|e| e.seq == step.seq);
                    if let Some(AuditAction::AutoAdvance { reading, .. }) = reverted.map(|e| &e.action) {
                        self.suppression = Some(Suppression {
                            node: step.node.clone(),
                            kind: reading.kind,
                            reading: reading.key(),
                        });
                    }
                }
                self.current = step.node;
            }
            AuditAction::ValueDeclined { reading: Some(reading), .. } => {
                self.quarantined.insert(reading.key());
            }
            AuditAction::ValueAccepted { .. }
            | AuditAction::ValueDeclined { reading: None, .. }
            | AuditAction::AlarmSeen { .. } => {}
        }
        self.audit.push(event);
        Ok(())
    }

    pub fn current_view(&self, store: &VitalStore, now: u64) -> StepView {
        let node = self.current_node();
        let resolved = node
            .requirements
            .iter()
            .map(|req| ResolvedVital { requirement: req.clone(), outcome: self.resolve(req, store, now) })
            .collect();
        let choices = self
            .graph
            .outgoing_edges(&node.id)
            .expect("current is always a graph node")
            .into_iter()
            .map(|e| e.label.clone())
            .collect();
        let dosage = node.dosage_rule_id.as_ref().map(|rule_id| match self.options.rules.get(rule_id) {
            Some(rule) => match compute_dosage(rule, store, now) {
                Ok(result) => DosageOutcome::Computed(result),
                Err(err) => DosageOutcome::Unavailable(err),
            },
            None => DosageOutcome::Unavailable(DosageError::UnknownRule(rule_id.clone())),
        });
        StepView {
            session: self.id,
            graph_id: self.graph.id().to_string(),
            node_id: node.id.clone(),
            kind: node.kind,
            text: node.text.clone(),
            resolved,
            choices,
            pending_auto: self.pending_auto(),
            dosage,
            can_undo: !self.history.is_empty(),
            at: now,
        }
    }

    fn resolve(&self, req: &VitalRequirement, store: &VitalStore, now: u64) -> Outcome {
        match store.latest(req.kind, now) {
            None => Outcome::Unknown,
            Some(obs) => Outcome::Known {
                declined: self.quarantined.contains(&obs.reading.key()),
                range: evaluate_range(obs.reading.value, req.min, req.max),
                value: obs.reading.value,
                timestamp: obs.reading.timestamp,
                origin: obs.reading.origin,
                freshness: obs.freshness,
            },
        }
    }

    fn pending_auto(&self) -> Option<PendingAuto> {
        let step = self.history.last().filter(|s| s.cause == Cause::Automated)?;
        let event = self.audit.iter().rev().find(|e| e.seq == step.seq)?;
        let AuditAction::AutoAdvance { choice, reading, clearance, .. } = &event.action else {
            return None;
        };
        let direction = match clearance.direction {
            Direction::OutOfRange => "outside",
            Direction::InRange => "inside",
        };
        Some(PendingAuto {
            seq: event.seq,
            from: step.node.clone(),
            choice: choice.clone(),
            kind: reading.kind,
            value: reading.value,
            description: format!(
                "took `{choice}` at `{}`: {} {} {} is {direction} the bounds by {} (needed more than {})",
                step.node,
                reading.kind,
                reading.value,
                reading.kind.canonical_unit(),
                clearance.clearance,
                clearance.required
            ),
        })
    }

    pub fn advance(&mut self, store: &VitalStore, choice: &EdgeLabel, now: u64) -> Result<StepView, NavError> {
        let node = self.current_node();
        if node.kind == NodeKind::Terminal {
            return Err(NavError::TerminalReached { node: node.id.clone() });
        }
        let edge = self.graph.follow(&self.current, choice).ok_or_else(|| NavError::InvalidChoice {
            node: self.current.clone(),
            choice: choice.to_string(),
            available: self
                .graph
                .outgoing_edges(&self.current)
                .unwrap_or_default()
                .iter()
                .map(|e| e.label.to_string())
                .collect(),
        })?;
        let to = edge.to.clone();
        self.record(now, AuditAction::ManualAdvance { choice: Some(choice.clone()), to });
        Ok(self.current_view(store, now))
    }

    /// Moves to `target` outside the edge structure after an accepted alarm.
    pub fn jump_to(&mut self, store: &VitalStore, target: &str, now: u64) -> Result<StepView, NavError> {
        if !self.graph.contains(target) {
            return Err(NavError::UnknownNode(target.to_string()));
        }
        self.record(now, AuditAction::ManualAdvance { choice: None, to: target.to_string() });
        Ok(self.current_view(store, now))
    }

    pub fn note_alarm(&mut self, alarm_id: AlarmId, decision: VerdictDecision, now: u64) {
        self.record(now, AuditAction::AlarmSeen { alarm_id, decision });
    }

    /// The branch the engine would take right now, if any.
    fn auto_decision(&self, store: &VitalStore, now: u64) -> Option<AuditAction> {
        let node = self.current_node();
        if node.kind != NodeKind::Decision {
            return None;
        }
        let mut deciding = node.requirements.iter().filter(|r| r.purpose == Purpose::Decision);
        let req = deciding.next()?;
        if deciding.next().is_some() || !req.has_bounds() {
            return None;
        }
        let yes = self.graph.follow(&node.id, &EdgeLabel::Yes)?;
        let no = self.graph.follow(&node.id, &EdgeLabel::No)?;

        let obs = store.latest(req.kind, now)?;
        if !obs.freshness.is_fresh() {
            return None;
        }
        let key = obs.reading.key();
        if self.quarantined.contains(&key) {
            return None;
        }
        if let Some(s) = &self.suppression {
            if s.node == node.id && s.kind == req.kind && s.reading == key {
                return None;
            }
        }
        let margin = self.options.margin;
        let clearance = clearance(obs.reading.value, req.min, req.max, margin)?;
        if !clearance.is_clear() {
            return None;
        }
        let edge = match clearance.direction {
            Direction::OutOfRange => yes,
            Direction::InRange => no,
        };
        Some(AuditAction::AutoAdvance {
            choice: edge.label.clone(),
            to: edge.to.clone(),
            reading: obs.reading,
            min: req.min,
            max: req.max,
            margin,
            clearance,
            now,
            staleness_window_ms: store.policy().window(req.kind),
        })
    }

    /// Takes the current decision automatically when a single fresh,
    /// trusted value clears its bound by more than the margin. Decision
    /// nodes are phrased so that `yes` is the out-of-range branch and `no`
    /// the in-range one.
    pub fn try_auto_decide(&mut self, store: &VitalStore, now: u64) -> Option<StepView> {
        let action = self.auto_decision(store, now)?;
        self.record(now, action);
        Some(self.current_view(store, now))
    }

    /// Repeats [`Session::try_auto_decide`] while consecutive decisions are
    /// each clear. Stops after visiting as many nodes as the graph has, so a
    /// cycle of clear decisions cannot spin forever.
    pub fn auto_decide_chain(&mut self, store: &VitalStore, now: u64) -> Vec<u64> {
        let mut taken = Vec::new();
        for _ in 0..self.graph.nodes().len() {
            if self.try_auto_decide(store, now).is_none() {
                break;
            }
            taken.push(self.audit.last().expect("auto advance recorded").seq);
        }
        taken
    }

    pub fn undo(&mut self, store: &VitalStore, now: u64) -> Result<StepView, NavError> {
        let step = self.history.last().ok_or(NavError::NothingToUndo)?;
        let action = AuditAction::Undo { reverted_seq: step.seq, restored: step.node.clone() };
        self.record(now, action);
        Ok(self.current_view(store, now))
    }

    pub fn record_verdict(
        &mut self,
        store: &VitalStore,
        kind: VitalKind,
        accept: bool,
        now: u64,
    ) -> Result<&AuditEvent, NavError> {
        if !self.current_node().requirements.iter().any(|r| r.kind == kind) {
            return Err(NavError::UnknownRequirement { node: self.current.clone(), kind });
        }
        let reading: Option<VitalReading> = store.latest(kind, now).map(|o| o.reading);
        let action = if accept {
            AuditAction::ValueAccepted { kind, reading }
        } else {
            AuditAction::ValueDeclined { kind, reading }
        };
        Ok(self.record(now, action))
    }

    /// Node sequence from the entry to `current`, rebuilt from the audit
    /// trail only.
    pub fn replay_path(graph: &TreatmentGraph, events: &[AuditEvent]) -> Result<Vec<String>, NavError> {
        let mut path = vec![graph.entry().to_string()];
        for event in events {
            match &event.action {
                AuditAction::ManualAdvance { to, .. } | AuditAction::AutoAdvance { to, .. } => {
                    path.push(to.clone())
                }
                AuditAction::Undo { .. } => {
                    if path.len() < 2 {
                        return Err(NavError::ReplayMismatch { seq: event.seq, reason: "undo past entry".into() });
                    }
                    path.pop();
                }
                _ => {}
            }
        }
        Ok(path)
    }
}

#[cfg(test)]
mod tests;
