//! Deterministic scripted runs: a device trace and a script of operator
//! commands merged on one timeline and driven through an [`Engine`].
//!
//! Script file: JSON array of commands, each with an `at` time in ms and a
//! `cmd` tag:
//!
//! ```json
//! [
//!   {"at": 500,  "cmd": "entry", "kind": "age", "value": 45},
//!   {"at": 3000, "cmd": "undo"},
//!   {"at": 4000, "cmd": "advance", "choice": "yes"},
//!   {"at": 5000, "cmd": "verdict", "kind": "spo2", "accept": false},
//!   {"at": 7000, "cmd": "alarm_verdict", "alarm": 1, "decision": "dismiss"}
//! ]
//! ```
//!
//! Trace messages are delivered at their offsets; a reading and a command at
//! the same time are processed reading first.

use serde::{Deserialize, Serialize};

use crate::alarm::{Alarm, AlarmId, OperatorVerdict, VerdictDecision};
use crate::catalog::VitalKind;
use crate::engine::{Engine, EngineError, EngineEvent, SessionLog};
use crate::graph::EdgeLabel;
use crate::navigator::{SessionId, StepView};
use crate::wire::TraceFile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScriptAction {
    Advance { choice: EdgeLabel },
    Undo,
    Verdict { kind: VitalKind, accept: bool },
    Entry { kind: VitalKind, value: f64 },
    AlarmVerdict {
        alarm: AlarmId,
        decision: VerdictDecision,
        #[serde(default)]
        target: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptCommand {
    pub at: u64,
    #[serde(flatten)]
    pub action: ScriptAction,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Script {
    pub commands: Vec<ScriptCommand>,
}

impl Script {
    pub fn parse(text: &str) -> Result<Self, String> {
        let commands: Vec<ScriptCommand> = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if commands.windows(2).any(|w| w[1].at < w[0].at) {
            return Err("script commands must be in non-decreasing time order".into());
        }
        Ok(Script { commands })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("script command {index} at {at} ms failed: {source}")]
    Command {
        index: usize,
        at: u64,
        #[source]
        source: EngineError,
    },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub session: SessionId,
    /// Every view published to the operator, in order.
    pub shown: Vec<StepView>,
    pub final_view: StepView,
    pub alarms: Vec<Alarm>,
    pub readings_delivered: usize,
    pub readings_rejected: usize,
    #[serde(skip)]
    pub log: SessionLog,
}

impl ScenarioOutcome {
    /// Final state as pretty JSON followed by the session log, one record per line.
    pub fn render(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("outcome serialization is infallible");
        out.push('\n');
        out.push_str(&self.log.to_jsonl());
        out
    }
}

enum Tick<'a> {
    Reading(&'a crate::wire::TraceEntry),
    Command(usize, &'a ScriptCommand),
}

/// Starts a session on `graph_id` at time 0 and plays `trace` and `script`
/// against it. Rejected readings are counted; a failing command aborts the run.
pub fn run_scenario(
    engine: &mut Engine,
    graph_id: &str,
    trace: &TraceFile,
    script: &Script,
) -> Result<ScenarioOutcome, ScenarioError> {
    let first = engine.start_session(graph_id, 0)?;
    let session = first.session;
    let mut shown = vec![first];
    let mut collect = |engine: &mut Engine| {
        for event in engine.drain_events() {
            if let EngineEvent::Step { session: s, view, .. } = event {
                if s == session {
                    shown.push(view);
                }
            }
        }
    };
    engine.drain_events();

    let mut ticks: Vec<(u64, u8, Tick<'_>)> = trace
        .entries()
        .iter()
        .map(|e| (e.offset_ms, 0, Tick::Reading(e)))
        .chain(script.commands.iter().enumerate().map(|(i, c)| (c.at, 1, Tick::Command(i, c))))
        .collect();
    ticks.sort_by_key(|(at, order, _)| (*at, *order));

    let mut delivered = 0;
    let mut rejected = 0;
    let mut now = 0;
    for (at, _, tick) in ticks {
        now = now.max(at);
        match tick {
            Tick::Reading(entry) => match engine.ingest(entry.message.clone().into_reading(), now) {
                Ok(_) => delivered += 1,
                Err(_) => rejected += 1,
            },
            Tick::Command(index, command) => {
                apply_command(engine, session, &command.action, now)
                    .map_err(|source| ScenarioError::Command { index, at: command.at, source })?;
            }
        }
        collect(engine);
    }

    Ok(ScenarioOutcome {
        session,
        shown,
        final_view: engine.view(session, now)?,
        alarms: engine.list_alarms(None).into_iter().cloned().collect(),
        readings_delivered: delivered,
        readings_rejected: rejected,
        log: engine.export_session(session)?,
    })
}

fn apply_command(engine: &mut Engine, session: SessionId, action: &ScriptAction, now: u64) -> Result<(), EngineError> {
    match action {
        ScriptAction::Advance { choice } => engine.advance(session, choice, now).map(drop),
        ScriptAction::Undo => engine.undo(session, now).map(drop),
        ScriptAction::Verdict { kind, accept } => engine.record_verdict(session, *kind, *accept, now).map(drop),
        ScriptAction::Entry { kind, value } => engine.set_database_entry(*kind, *value, now, now).map(drop),
        ScriptAction::AlarmVerdict { alarm, decision, target } => {
            let verdict = OperatorVerdict { decision: *decision, target: target.clone(), timestamp: now };
            engine.resolve_alarm(*alarm, verdict, now).map(drop)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn script_parsing() {
        let script = Script::parse(
            r#"[{"at": 1, "cmd": "undo"},
                {"at": 2, "cmd": "advance", "choice": "branch:child"},
                {"at": 3, "cmd": "alarm_verdict", "alarm": 1, "decision": "accept_change", "target": "x"}]"#,
        )
        .unwrap();
        assert_eq!(script.commands.len(), 3);
        assert_eq!(
            script.commands[1].action,
            ScriptAction::Advance { choice: EdgeLabel::Branch("child".into()) }
        );
        assert!(Script::parse(r#"[{"at": 5, "cmd": "undo"}, {"at": 1, "cmd": "undo"}]"#).is_err());
        assert!(Script::parse(r#"[{"at": 5, "cmd": "jump"}]"#).is_err());
    }
}
