use serde::{Deserialize, Serialize};

use super::range::{clearance, ClearMargin, Clearance};
use crate::alarm::{AlarmId, VerdictDecision};
use crate::catalog::VitalKind;
use crate::graph::EdgeLabel;
use crate::store::VitalReading;

/// One entry of a session's append-only audit trail. `node` is the node the
/// session was on when the event happened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub seq: u64,
    pub timestamp: u64,
    pub node: String,
    #[serde(flatten)]
    pub action: AuditAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AuditAction {
    /// Operator moved along an edge, or jumped to `to` when `choice` is absent.
    ManualAdvance {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        choice: Option<EdgeLabel>,
        to: String,
    },
    /// The engine took a branch on its own. Carries everything needed to
    /// re-check the decision.
    AutoAdvance {
        choice: EdgeLabel,
        to: String,
        reading: VitalReading,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max: Option<f64>,
        margin: ClearMargin,
        clearance: Clearance,
        now: u64,
        staleness_window_ms: Option<u64>,
    },
    Undo {
        reverted_seq: u64,
        restored: String,
    },
    ValueAccepted {
        kind: VitalKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reading: Option<VitalReading>,
    },
    ValueDeclined {
        kind: VitalKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reading: Option<VitalReading>,
    },
    AlarmSeen {
        alarm_id: AlarmId,
        decision: VerdictDecision,
    },
}

impl AuditAction {
    pub fn name(&self) -> &'static str {
        match self {
            AuditAction::ManualAdvance { .. } => "manual_advance",
            AuditAction::AutoAdvance { .. } => "auto_advance",
            AuditAction::Undo { .. } => "undo",
            AuditAction::ValueAccepted { .. } => "value_accepted",
            AuditAction::ValueDeclined { .. } => "value_declined",
            AuditAction::AlarmSeen { .. } => "alarm_seen",
        }
    }

    /// Destination when this event moves the session forward.
    pub fn destination(&self) -> Option<&str> {
        match self {
            AuditAction::ManualAdvance { to, .. } | AuditAction::AutoAdvance { to, .. } => Some(to),
            _ => None,
        }
    }
}

impl AuditEvent {
    /// For automated advances: whether the recorded reading was fresh at the
    /// recorded time and cleared the recorded margin. Checkable from the
    /// payload alone.
    pub fn auto_advance_is_sound(&self) -> Option<bool> {
        let AuditAction::AutoAdvance {
            reading, now, staleness_window_ms, clearance: recorded, min, max, margin, ..
        } = &self.action
        else {
            return None;
        };
        let age = now.saturating_sub(reading.timestamp);
        let fresh = staleness_window_ms.is_none_or(|w| age <= w);
        let recomputed = clearance(reading.value, *min, *max, *margin);
        Some(fresh && recomputed.as_ref() == Some(recorded) && recorded.is_clear())
    }
}
