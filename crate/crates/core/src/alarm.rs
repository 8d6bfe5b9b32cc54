//! Threshold alarms with debounce and operator verdicts.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::catalog::VitalKind;
use crate::graph::{Purpose, TreatmentNode};
use crate::navigator::{evaluate_range, SessionId};
use crate::store::{Observation, VitalReading};

pub const DEFAULT_DEBOUNCE_MS: u64 = 60_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AlarmId(pub u64);

impl fmt::Display for AlarmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdSource {
    NodeRequirement,
    GlobalTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmThreshold {
    pub kind: VitalKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    pub source: ThresholdSource,
    /// Node proposed as the new step when the operator accepts the alarm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct ThresholdKey {
    kind: VitalKind,
    min: Option<u64>,
    max: Option<u64>,
    source: ThresholdSource,
}

impl AlarmThreshold {
    pub fn violated_by(&self, value: f64) -> bool {
        evaluate_range(value, self.min, self.max).is_out_of_range()
    }

    fn key(&self) -> ThresholdKey {
        ThresholdKey {
            kind: self.kind,
            min: self.min.map(f64::to_bits),
            max: self.max.map(f64::to_bits),
            source: self.source,
        }
    }
}

/// Step-local thresholds: bounded display requirements of `node`. Decision
/// bounds feed auto-decide instead.
pub fn node_thresholds(node: &TreatmentNode) -> Vec<AlarmThreshold> {
    node.requirements
        .iter()
        .filter(|r| r.purpose == Purpose::Display && r.has_bounds())
        .map(|r| AlarmThreshold {
            kind: r.kind,
            min: r.min,
            max: r.max,
            source: ThresholdSource::NodeRequirement,
            target: None,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ThresholdTableError {
    #[error("threshold table is not valid JSON: {0}")]
    Syntax(String),
    #[error("entry {index} ({kind}) has no bound")]
    NoBound { index: usize, kind: VitalKind },
    #[error("entry {index} ({kind}) has min above max")]
    Inverted { index: usize, kind: VitalKind },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TableEntry {
    kind: VitalKind,
    #[serde(default)]
    min: Option<f64>,
    #[serde(default)]
    max: Option<f64>,
    #[serde(default)]
    target: Option<String>,
}

/// Parses the global threshold file: a JSON array of `{kind, min?, max?}`
/// with an optional `target` node for proposed path changes.
pub fn parse_threshold_table(text: &str) -> Result<Vec<AlarmThreshold>, ThresholdTableError> {
    let entries: Vec<TableEntry> =
        serde_json::from_str(text).map_err(|e| ThresholdTableError::Syntax(e.to_string()))?;
    entries
        .into_iter()
        .enumerate()
        .map(|(index, e)| {
            match (e.min, e.max) {
                (None, None) => return Err(ThresholdTableError::NoBound { index, kind: e.kind }),
                (Some(lo), Some(hi)) if lo > hi => {
                    return Err(ThresholdTableError::Inverted { index, kind: e.kind })
                }
                _ => {}
            }
            Ok(AlarmThreshold {
                kind: e.kind,
                min: e.min,
                max: e.max,
                source: ThresholdSource::GlobalTable,
                target: e.target,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlarmState {
    Open,
    Accepted,
    Dismissed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictDecision {
    AcceptChange,
    Dismiss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorVerdict {
    pub decision: VerdictDecision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default)]
    pub timestamp: u64,
}

impl OperatorVerdict {
    pub fn dismiss(timestamp: u64) -> Self {
        OperatorVerdict { decision: VerdictDecision::Dismiss, target: None, timestamp }
    }

    pub fn accept(target: Option<String>, timestamp: u64) -> Self {
        OperatorVerdict { decision: VerdictDecision::AcceptChange, target, timestamp }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alarm {
    pub id: AlarmId,
    pub raised_at: u64,
    pub reading: VitalReading,
    pub threshold: AlarmThreshold,
    /// Copy of every latest vital at raise time.
    pub snapshot: BTreeMap<VitalKind, Observation>,
    pub session: Option<SessionId>,
    pub step: Option<String>,
    pub state: AlarmState,
    pub verdict: Option<OperatorVerdict>,
}

impl Alarm {
    /// Target the operator would move to when accepting.
    pub fn proposed_target(&self) -> Option<&str> {
        self.threshold.target.as_deref()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum AlarmError {
    #[error("unknown alarm {0}")]
    UnknownAlarm(AlarmId),
    #[error("alarm {0} is already resolved")]
    AlreadyResolved(AlarmId),
    #[error("accepting a path change for alarm {0} requires a target node")]
    MissingTarget(AlarmId),
}

impl AlarmError {
    pub fn code(&self) -> &'static str {
        match self {
            AlarmError::UnknownAlarm(_) => "unknown_alarm",
            AlarmError::AlreadyResolved(_) => "already_resolved",
            AlarmError::MissingTarget(_) => "missing_target",
        }
    }
}

/// Where an alarm is raised: the session and its current step.
#[derive(Debug, Clone, Copy)]
pub struct AlarmContext<'a> {
    pub session: Option<SessionId>,
    pub step: Option<&'a str>,
}

#[derive(Debug, Clone)]
pub struct AlarmMonitor {
    debounce_ms: u64,
    alarms: Vec<Alarm>,
}

impl Default for AlarmMonitor {
    fn default() -> Self {
        AlarmMonitor::new(DEFAULT_DEBOUNCE_MS)
    }
}

impl AlarmMonitor {
    pub fn new(debounce_ms: u64) -> Self {
        AlarmMonitor { debounce_ms, alarms: Vec::new() }
    }

    pub fn debounce_ms(&self) -> u64 {
        self.debounce_ms
    }

    fn debounced(&self, threshold: &AlarmThreshold, at: u64) -> bool {
        let key = threshold.key();
        self.alarms.iter().any(|a| {
            a.state == AlarmState::Open
                && a.threshold.key() == key
                && at.saturating_sub(a.raised_at) < self.debounce_ms
        })
    }

    /// Raises one alarm per applicable threshold that `reading` violates,
    /// unless an open alarm for the same threshold was raised within the
    /// debounce window.
    pub fn evaluate_reading(
        &mut self,
        reading: &VitalReading,
        thresholds: &[AlarmThreshold],
        snapshot: &BTreeMap<VitalKind, Observation>,
        context: AlarmContext<'_>,
    ) -> Vec<Alarm> {
        let mut raised = Vec::new();
        for threshold in thresholds.iter().filter(|t| t.kind == reading.kind) {
            if !threshold.violated_by(reading.value) || self.debounced(threshold, reading.timestamp) {
                continue;
            }
            let alarm = Alarm {
                id: AlarmId(self.alarms.len() as u64 + 1),
                raised_at: reading.timestamp,
                reading: reading.clone(),
                threshold: threshold.clone(),
                snapshot: snapshot.clone(),
                session: context.session,
                step: context.step.map(str::to_string),
                state: AlarmState::Open,
                verdict: None,
            };
            self.alarms.push(alarm.clone());
            raised.push(alarm);
        }
        raised
    }

    pub fn get(&self, id: AlarmId) -> Option<&Alarm> {
        self.alarms.iter().find(|a| a.id == id)
    }

    /// Checks that `verdict` can close alarm `id` and returns the resolved
    /// jump target, if any, without changing anything.
    pub fn check_verdict(&self, id: AlarmId, verdict: &OperatorVerdict) -> Result<Option<String>, AlarmError> {
        let alarm = self.get(id).ok_or(AlarmError::UnknownAlarm(id))?;
        if alarm.state != AlarmState::Open {
            return Err(AlarmError::AlreadyResolved(id));
        }
        match verdict.decision {
            VerdictDecision::Dismiss => Ok(None),
            VerdictDecision::AcceptChange => verdict
                .target
                .clone()
                .or_else(|| alarm.proposed_target().map(str::to_string))
                .map(Some)
                .ok_or(AlarmError::MissingTarget(id)),
        }
    }

    pub fn resolve(&mut self, id: AlarmId, verdict: OperatorVerdict) -> Result<&Alarm, AlarmError> {
        let target = self.check_verdict(id, &verdict)?;
        let alarm = self.alarms.iter_mut().find(|a| a.id == id).expect("checked above");
        alarm.state = match verdict.decision {
            VerdictDecision::AcceptChange => AlarmState::Accepted,
            VerdictDecision::Dismiss => AlarmState::Dismissed,
        };
        alarm.verdict = Some(OperatorVerdict { target, ..verdict });
        Ok(alarm)
    }

    /// Alarms in raise order, optionally filtered by state.
    pub fn list_alarms(&self, filter: Option<AlarmState>) -> Vec<&Alarm> {
        self.alarms.iter().filter(|a| filter.is_none_or(|s| a.state == s)).collect()
    }

    pub(crate) fn restore(&mut self, alarm: Alarm) {
        self.alarms.push(alarm);
    }

    pub(crate) fn restore_verdict(&mut self, id: AlarmId, verdict: OperatorVerdict) -> Result<(), AlarmError> {
        self.resolve(id, verdict).map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spo2_table() -> Vec<AlarmThreshold> {
        parse_threshold_table(r#"[{"kind": "spo2", "min": 90}]"#).unwrap()
    }

    fn spo2(value: f64, t: u64) -> VitalReading {
        VitalReading::new(VitalKind::Spo2, value, t, "zoll-1")
    }

    fn ctx() -> AlarmContext<'static> {
        AlarmContext { session: Some(SessionId(1)), step: Some("recheck") }
    }

    #[test]
    fn breach_raises_alarm_with_snapshot() {
        let mut monitor = AlarmMonitor::default();
        let mut snapshot = BTreeMap::new();
        snapshot.insert(
            VitalKind::Spo2,
            Observation { reading: spo2(85.0, 1000), freshness: crate::store::Freshness::Fresh },
        );
        let raised = monitor.evaluate_reading(&spo2(85.0, 1000), &spo2_table(), &snapshot, ctx());
        assert_eq!(raised.len(), 1);
        assert_eq!(raised[0].snapshot, snapshot);
        assert_eq!(raised[0].step.as_deref(), Some("recheck"));
        assert_eq!(raised[0].state, AlarmState::Open);
    }

    #[test]
    fn in_range_value_is_quiet() {
        let mut monitor = AlarmMonitor::default();
        assert!(monitor.evaluate_reading(&spo2(92.0, 0), &spo2_table(), &BTreeMap::new(), ctx()).is_empty());
        // inclusive bound
        assert!(monitor.evaluate_reading(&spo2(90.0, 0), &spo2_table(), &BTreeMap::new(), ctx()).is_empty());
    }

    #[test]
    fn debounce_window() {
        let mut monitor = AlarmMonitor::default();
        let table = spo2_table();
        let empty = BTreeMap::new();
        assert_eq!(monitor.evaluate_reading(&spo2(85.0, 0), &table, &empty, ctx()).len(), 1);
        assert!(monitor.evaluate_reading(&spo2(84.0, 10_000), &table, &empty, ctx()).is_empty());
        assert!(monitor.evaluate_reading(&spo2(84.0, 59_999), &table, &empty, ctx()).is_empty());
        assert_eq!(monitor.evaluate_reading(&spo2(84.0, 60_000), &table, &empty, ctx()).len(), 1);
    }

    #[test]
    fn resolution_is_terminal() {
        let mut monitor = AlarmMonitor::default();
        monitor.evaluate_reading(&spo2(85.0, 0), &spo2_table(), &BTreeMap::new(), ctx());
        let id = AlarmId(1);
        assert_eq!(monitor.resolve(id, OperatorVerdict::dismiss(5)).unwrap().state, AlarmState::Dismissed);
        assert_eq!(monitor.resolve(id, OperatorVerdict::dismiss(6)), Err(AlarmError::AlreadyResolved(id)));
        assert_eq!(
            monitor.resolve(AlarmId(9), OperatorVerdict::dismiss(6)),
            Err(AlarmError::UnknownAlarm(AlarmId(9)))
        );
    }

    #[test]
    fn accept_needs_target() {
        let mut monitor = AlarmMonitor::default();
        monitor.evaluate_reading(&spo2(85.0, 0), &spo2_table(), &BTreeMap::new(), ctx());
        assert_eq!(
            monitor.resolve(AlarmId(1), OperatorVerdict::accept(None, 1)),
            Err(AlarmError::MissingTarget(AlarmId(1)))
        );
        let alarm = monitor.resolve(AlarmId(1), OperatorVerdict::accept(Some("oxygen".into()), 1)).unwrap();
        assert_eq!(alarm.state, AlarmState::Accepted);
    }

    #[test]
    fn listing() {
        let mut monitor = AlarmMonitor::new(0);
        assert!(monitor.list_alarms(None).is_empty());
        let table = spo2_table();
        monitor.evaluate_reading(&spo2(85.0, 0), &table, &BTreeMap::new(), ctx());
        monitor.evaluate_reading(&spo2(85.0, 1), &table, &BTreeMap::new(), ctx());
        monitor.resolve(AlarmId(1), OperatorVerdict::dismiss(2)).unwrap();
        assert_eq!(monitor.list_alarms(Some(AlarmState::Open)).len(), 1);
        let ids: Vec<_> = monitor.list_alarms(None).iter().map(|a| a.id).collect();
        assert_eq!(ids, vec![AlarmId(1), AlarmId(2)]);
    }

    #[test]
    fn table_validation() {
        assert!(matches!(
            parse_threshold_table(r#"[{"kind": "spo2"}]"#),
            Err(ThresholdTableError::NoBound { .. })
        ));
        assert!(matches!(
            parse_threshold_table(r#"[{"kind": "spo2", "min": 95, "max": 90}]"#),
            Err(ThresholdTableError::Inverted { .. })
        ));
        assert!(parse_threshold_table(r#"[{"kind": "spo2", "min": 90, "unit": "%"}]"#).is_err());
    }
}
