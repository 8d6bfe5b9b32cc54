//! Single-patient engine tying the store, sessions and alarm monitor
//! together behind one command surface, with a journal that can be exported
//! per session and replayed.
//!
//! Every accepted reading, audit event, raised alarm and alarm verdict is
//! appended to the journal under a global sequence number. Replaying an
//! exported log re-ingests readings without side effects, re-applies audit
//! events through [`Session::apply_event`] and restores alarms verbatim, so
//! the rebuilt engine ends in the same state without re-running automation.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::alarm::{
    node_thresholds, Alarm, AlarmContext, AlarmError, AlarmId, AlarmMonitor, AlarmState, AlarmThreshold,
    OperatorVerdict, VerdictDecision, DEFAULT_DEBOUNCE_MS,
};
use crate::catalog::{SourceClass, VitalKind};
use crate::dosage::DosageRuleSet;
use crate::graph::{EdgeLabel, Purpose, TreatmentGraph};
use crate::navigator::{AuditEvent, ClearMargin, NavError, Session, SessionId, SessionOptions, StepView};
use crate::store::{StalenessPolicy, StoreError, VitalReading, VitalStore, CONTROL_CENTER};

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub staleness: StalenessPolicy,
    pub clear_margin: ClearMargin,
    pub debounce_ms: u64,
    pub thresholds: Vec<AlarmThreshold>,
    pub rules: Arc<DosageRuleSet>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            staleness: StalenessPolicy::default(),
            clear_margin: ClearMargin::default(),
            debounce_ms: DEFAULT_DEBOUNCE_MS,
            thresholds: Vec::new(),
            rules: Arc::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error("unknown graph `{0}`")]
    UnknownGraph(String),
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
    #[error(transparent)]
    Navigation(NavError),
    #[error(transparent)]
    Store(StoreError),
    #[error(transparent)]
    Alarm(AlarmError),
    #[error("alarm {0} is not attached to a session")]
    AlarmWithoutSession(AlarmId),
    #[error("log record {seq}: {reason}")]
    Replay { seq: u64, reason: String },
}

impl From<NavError> for EngineError {
    fn from(e: NavError) -> Self {
        EngineError::Navigation(e)
    }
}

impl From<AlarmError> for EngineError {
    fn from(e: AlarmError) -> Self {
        EngineError::Alarm(e)
    }
}

impl From<StoreError> for EngineError {
    fn from(e: StoreError) -> Self {
        EngineError::Store(e)
    }
}

impl EngineError {
    /// Stable snake_case name of the innermost error.
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::UnknownGraph(_) => "unknown_graph",
            EngineError::UnknownSession(_) => "unknown_session",
            EngineError::Navigation(e) => e.code(),
            EngineError::Store(e) => e.code(),
            EngineError::Alarm(e) => e.code(),
            EngineError::AlarmWithoutSession(_) => "alarm_without_session",
            EngineError::Replay { .. } => "replay_mismatch",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogRecord {
    SessionStart { session: SessionId, graph_id: String, at: u64, clear_margin: ClearMargin },
    Reading { reading: VitalReading },
    Audit { session: SessionId, event: AuditEvent },
    AlarmRaised { alarm: Alarm },
    AlarmResolved { alarm_id: AlarmId, verdict: OperatorVerdict },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub seq: u64,
    #[serde(flatten)]
    pub record: LogRecord,
}

/// Exported, ordered log of one session: one JSON object per line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SessionLog {
    pub entries: Vec<JournalEntry>,
}

impl SessionLog {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for entry in &self.entries {
            out.push_str(&serde_json::to_string(entry).expect("log serialization is infallible"));
            out.push('\n');
        }
        out
    }

    pub fn parse_jsonl(text: &str) -> Result<Self, EngineError> {
        let entries = text
            .lines()
            .enumerate()
            .filter(|(_, line)| !line.trim().is_empty())
            .map(|(i, line)| {
                serde_json::from_str(line).map_err(|e| EngineError::Replay {
                    seq: i as u64 + 1,
                    reason: e.to_string(),
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(SessionLog { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Notifications for subscribers, in the order they happened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EngineEvent {
    Step { session: SessionId, seq: u64, view: StepView },
    AutoAdvanced { session: SessionId, event: AuditEvent },
    AlarmRaised { alarm: Alarm },
    AlarmResolved { alarm: Alarm },
    Vitals { reading: VitalReading },
}

/// Comparable summary used to check replays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineState {
    pub sessions: BTreeMap<SessionId, String>,
    pub latest: BTreeMap<VitalKind, VitalReading>,
    pub alarms: Vec<(AlarmId, AlarmState)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestOutcome {
    pub accepted: bool,
    pub alarms: Vec<Alarm>,
    pub auto_advanced: Vec<(SessionId, u64)>,
}

#[derive(Debug)]
struct SessionSlot {
    session: Session,
    journaled: usize,
}

#[derive(Debug)]
pub struct Engine {
    config: EngineConfig,
    graphs: BTreeMap<String, Arc<TreatmentGraph>>,
    store: Arc<VitalStore>,
    sessions: BTreeMap<SessionId, SessionSlot>,
    monitor: AlarmMonitor,
    journal: Vec<JournalEntry>,
    outbox: Vec<EngineEvent>,
}

impl Engine {
    pub fn new(config: EngineConfig, graphs: impl IntoIterator<Item = TreatmentGraph>) -> Self {
        let graphs = graphs.into_iter().map(|g| (g.id().to_string(), Arc::new(g))).collect();
        Engine {
            store: Arc::new(VitalStore::new(config.staleness.clone())),
            monitor: AlarmMonitor::new(config.debounce_ms),
            config,
            graphs,
            sessions: BTreeMap::new(),
            journal: Vec::new(),
            outbox: Vec::new(),
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn store(&self) -> &Arc<VitalStore> {
        &self.store
    }

    pub fn graphs(&self) -> impl Iterator<Item = &Arc<TreatmentGraph>> {
        self.graphs.values()
    }

    pub fn session(&self, id: SessionId) -> Result<&Session, EngineError> {
        self.sessions.get(&id).map(|s| &s.session).ok_or(EngineError::UnknownSession(id))
    }

    pub fn session_ids(&self) -> Vec<SessionId> {
        self.sessions.keys().copied().collect()
    }

    pub fn journal(&self) -> &[JournalEntry] {
        &self.journal
    }

    pub fn drain_events(&mut self) -> Vec<EngineEvent> {
        std::mem::take(&mut self.outbox)
    }

    fn push_record(&mut self, record: LogRecord) {
        let seq = self.journal.len() as u64 + 1;
        self.journal.push(JournalEntry { seq, record });
    }

    fn slot_mut(&mut self, id: SessionId) -> Result<&mut SessionSlot, EngineError> {
        self.sessions.get_mut(&id).ok_or(EngineError::UnknownSession(id))
    }

    /// Journals audit events the session has appended since the last sync
    /// and publishes the resulting view.
    fn sync_session(&mut self, id: SessionId, now: u64) {
        let slot = self.sessions.get_mut(&id).expect("session exists");
        let fresh: Vec<AuditEvent> = slot.session.audit()[slot.journaled..].to_vec();
        slot.journaled = slot.session.audit().len();
        if fresh.is_empty() {
            return;
        }
        let view = slot.session.current_view(&self.store, now);
        let seq = fresh.last().expect("non-empty").seq;
        for event in fresh {
            if matches!(event.action, crate::navigator::AuditAction::AutoAdvance { .. }) {
                self.outbox.push(EngineEvent::AutoAdvanced { session: id, event: event.clone() });
            }
            self.push_record(LogRecord::Audit { session: id, event });
        }
        self.outbox.push(EngineEvent::Step { session: id, seq, view });
    }

    fn session_options(&self) -> SessionOptions {
        SessionOptions { margin: self.config.clear_margin, rules: self.config.rules.clone() }
    }

    pub fn start_session(&mut self, graph_id: &str, now: u64) -> Result<StepView, EngineError> {
        let graph = self.graphs.get(graph_id).cloned().ok_or_else(|| EngineError::UnknownGraph(graph_id.into()))?;
        let id = SessionId(self.sessions.keys().next_back().map_or(1, |s| s.0 + 1));
        let session = Session::start(id, graph, self.session_options())?;
        self.push_record(LogRecord::SessionStart {
            session: id,
            graph_id: graph_id.to_string(),
            at: now,
            clear_margin: self.config.clear_margin,
        });
        self.sessions.insert(id, SessionSlot { session, journaled: 0 });
        let store = self.store.clone();
        let slot = self.slot_mut(id)?;
        slot.session.auto_decide_chain(&store, now);
        self.sync_session(id, now);
        self.view(id, now)
    }

    pub fn view(&self, id: SessionId, now: u64) -> Result<StepView, EngineError> {
        Ok(self.session(id)?.current_view(&self.store, now))
    }

    pub fn advance(&mut self, id: SessionId, choice: &EdgeLabel, now: u64) -> Result<StepView, EngineError> {
        let store = self.store.clone();
        let slot = self.slot_mut(id)?;
        slot.session.advance(&store, choice, now)?;
        slot.session.auto_decide_chain(&store, now);
        self.sync_session(id, now);
        self.view(id, now)
    }

    pub fn undo(&mut self, id: SessionId, now: u64) -> Result<StepView, EngineError> {
        let store = self.store.clone();
        self.slot_mut(id)?.session.undo(&store, now)?;
        self.sync_session(id, now);
        self.view(id, now)
    }

    pub fn record_verdict(
        &mut self,
        id: SessionId,
        kind: VitalKind,
        accept: bool,
        now: u64,
    ) -> Result<AuditEvent, EngineError> {
        let store = self.store.clone();
        let event = self.slot_mut(id)?.session.record_verdict(&store, kind, accept, now)?.clone();
        self.sync_session(id, now);
        Ok(event)
    }

    /// Ingests a device reading, raises alarms and lets sessions waiting on
    /// that kind decide automatically.
    pub fn ingest(&mut self, reading: VitalReading, now: u64) -> Result<IngestOutcome, EngineError> {
        if !self.store.ingest_reading(reading.clone())?.is_new() {
            return Ok(IngestOutcome::default());
        }
        self.push_record(LogRecord::Reading { reading: reading.clone() });
        self.outbox.push(EngineEvent::Vitals { reading: reading.clone() });

        let snapshot = self.store.snapshot_all(now);
        let mut alarms = Vec::new();
        let newest = self.sessions.keys().next_back().copied();
        let global_context = AlarmContext {
            session: newest,
            step: newest.map(|id| self.sessions[&id].session.current()),
        };
        alarms.extend(self.monitor.evaluate_reading(&reading, &self.config.thresholds, &snapshot, global_context));
        for (id, slot) in &self.sessions {
            let local = node_thresholds(slot.session.current_node());
            if local.is_empty() {
                continue;
            }
            let context = AlarmContext { session: Some(*id), step: Some(slot.session.current()) };
            alarms.extend(self.monitor.evaluate_reading(&reading, &local, &snapshot, context));
        }
        for alarm in &alarms {
            self.push_record(LogRecord::AlarmRaised { alarm: alarm.clone() });
            self.outbox.push(EngineEvent::AlarmRaised { alarm: alarm.clone() });
        }

        let mut auto_advanced = Vec::new();
        let waiting: Vec<SessionId> = self
            .sessions
            .iter()
            .filter(|(_, slot)| {
                slot.session
                    .current_node()
                    .requirements
                    .iter()
                    .any(|r| r.kind == reading.kind && r.purpose == Purpose::Decision)
            })
            .map(|(id, _)| *id)
            .collect();
        let store = self.store.clone();
        for id in waiting {
            let slot = self.sessions.get_mut(&id).expect("listed above");
            for seq in slot.session.auto_decide_chain(&store, now) {
                auto_advanced.push((id, seq));
            }
            self.sync_session(id, now);
        }
        Ok(IngestOutcome { accepted: true, alarms, auto_advanced })
    }

    pub fn set_database_entry(
        &mut self,
        kind: VitalKind,
        value: f64,
        t: u64,
        now: u64,
    ) -> Result<IngestOutcome, EngineError> {
        if kind.source_class() != SourceClass::DatabaseEntry {
            return Err(StoreError::SourceClassViolation(kind).into());
        }
        self.ingest(VitalReading::new(kind, value, t, CONTROL_CENTER), now)
    }

    pub fn list_alarms(&self, filter: Option<AlarmState>) -> Vec<&Alarm> {
        self.monitor.list_alarms(filter)
    }

    pub fn resolve_alarm(&mut self, id: AlarmId, verdict: OperatorVerdict, now: u64) -> Result<Alarm, EngineError> {
        let target = self.monitor.check_verdict(id, &verdict)?;
        let session_id = self.monitor.get(id).and_then(|a| a.session);
        if let Some(target) = &target {
            let sid = session_id.ok_or(EngineError::AlarmWithoutSession(id))?;
            let session = self.session(sid)?;
            if !session.graph().contains(target) {
                return Err(NavError::UnknownNode(target.clone()).into());
            }
        }
        let alarm = self.monitor.resolve(id, verdict.clone())?.clone();
        self.push_record(LogRecord::AlarmResolved {
            alarm_id: id,
            verdict: alarm.verdict.clone().expect("resolved alarms carry their verdict"),
        });
        self.outbox.push(EngineEvent::AlarmResolved { alarm: alarm.clone() });
        if let Some(sid) = session_id.filter(|sid| self.sessions.contains_key(sid)) {
            let store = self.store.clone();
            let slot = self.slot_mut(sid)?;
            slot.session.note_alarm(id, verdict.decision, now);
            if let (VerdictDecision::AcceptChange, Some(target)) = (verdict.decision, &target) {
                slot.session.jump_to(&store, target, now)?;
            }
            self.sync_session(sid, now);
        }
        Ok(alarm)
    }

    /// Start record of the session plus every reading, its audit events and
    /// every alarm record, in journal order.
    pub fn export_session(&self, id: SessionId) -> Result<SessionLog, EngineError> {
        self.session(id)?;
        let entries = self
            .journal
            .iter()
            .filter(|entry| match &entry.record {
                LogRecord::SessionStart { session, .. } | LogRecord::Audit { session, .. } => *session == id,
                LogRecord::Reading { .. } | LogRecord::AlarmRaised { .. } | LogRecord::AlarmResolved { .. } => true,
            })
            .cloned()
            .collect();
        Ok(SessionLog { entries })
    }

    /// Rebuilds an engine from an exported log.
    pub fn replay(
        config: EngineConfig,
        graphs: impl IntoIterator<Item = TreatmentGraph>,
        log: &SessionLog,
    ) -> Result<Engine, EngineError> {
        let mut engine = Engine::new(config, graphs);
        for entry in &log.entries {
            let fail = |reason: String| EngineError::Replay { seq: entry.seq, reason };
            match &entry.record {
                LogRecord::SessionStart { session, graph_id, clear_margin, .. } => {
                    let graph = engine
                        .graphs
                        .get(graph_id)
                        .cloned()
                        .ok_or_else(|| fail(format!("unknown graph `{graph_id}`")))?;
                    let options = SessionOptions { margin: *clear_margin, rules: engine.config.rules.clone() };
                    let restored = Session::start(*session, graph, options).map_err(|e| fail(e.to_string()))?;
                    engine.sessions.insert(*session, SessionSlot { session: restored, journaled: 0 });
                }
                LogRecord::Reading { reading } => {
                    engine.store.ingest_reading(reading.clone()).map_err(|e| fail(e.to_string()))?;
                }
                LogRecord::Audit { session, event } => {
                    let slot = engine
                        .sessions
                        .get_mut(session)
                        .ok_or_else(|| fail(format!("unknown session {session}")))?;
                    slot.session.apply_event(event.clone()).map_err(|e| fail(e.to_string()))?;
                    slot.journaled = slot.session.audit().len();
                }
                LogRecord::AlarmRaised { alarm } => engine.monitor.restore(alarm.clone()),
                LogRecord::AlarmResolved { alarm_id, verdict } => {
                    engine
                        .monitor
                        .restore_verdict(*alarm_id, verdict.clone())
                        .map_err(|e| fail(e.to_string()))?;
                }
            }
            engine.journal.push(entry.clone());
        }
        Ok(engine)
    }

    pub fn state(&self) -> EngineState {
        EngineState {
            sessions: self.sessions.iter().map(|(id, s)| (*id, s.session.current().to_string())).collect(),
            latest: self.store.latest_map(),
            alarms: self.monitor.list_alarms(None).iter().map(|a| (a.id, a.state)).collect(),
        }
    }
}
