use std::sync::Arc;

use super::*;
use crate::graph::parse_graph;
use crate::store::StalenessPolicy;

const HYPOGLYCEMIA: &str = include_str!("../../../../fixtures/graphs/hypoglycemia.json");

fn fixture() -> Arc<TreatmentGraph> {
    Arc::new(parse_graph(HYPOGLYCEMIA).unwrap())
}

fn session() -> Session {
    Session::start(SessionId(1), fixture(), SessionOptions::default()).unwrap()
}

fn store() -> VitalStore {
    VitalStore::new(StalenessPolicy::default())
}

fn glucose(value: f64, t: u64) -> VitalReading {
    VitalReading::new(VitalKind::BloodGlucose, value, t, "glucometer")
}

#[test]
fn starts_at_entry() {
    let s = session();
    assert_eq!(s.current(), "assess_glucose");
    assert!(s.audit().is_empty());
    let entry = fixture().lookup_node("assess_glucose").unwrap().clone();
    assert_eq!(entry.kind, NodeKind::Decision);
    assert_eq!(entry.requirements.len(), 1);
    assert_eq!(entry.requirements[0].kind, VitalKind::BloodGlucose);
    assert_eq!(entry.requirements[0].min, Some(60.0));
}

#[test]
fn invalid_graph_refused() {
    let broken = HYPOGLYCEMIA.replace(
        r#"{ "from": "assess_glucose", "to": "other_causes", "label": "no" },"#,
        "",
    );
    let graph = Arc::new(parse_graph(&broken).unwrap());
    let err = Session::start(SessionId(1), graph, SessionOptions::default()).unwrap_err();
    assert!(matches!(err, NavError::InvalidGraph { .. }));
}

#[test]
fn sessions_are_independent() {
    let store = store();
    let mut a = session();
    let b = Session::start(SessionId(2), fixture(), SessionOptions::default()).unwrap();
    a.advance(&store, &EdgeLabel::Yes, 0).unwrap();
    assert_eq!(a.current(), "check_swallowing");
    assert_eq!(b.current(), "assess_glucose");
}

#[test]
fn view_resolves_in_declaration_order() {
    let store = store();
    store.ingest_reading(VitalReading::new(VitalKind::Spo2, 97.0, 10, "zoll")).unwrap();
    let mut s = session();
    s.advance(&store, &EdgeLabel::Yes, 0).unwrap();
    s.advance(&store, &EdgeLabel::Yes, 0).unwrap();
    let view = s.advance(&store, &EdgeLabel::Next, 20).unwrap();
    assert_eq!(view.node_id, "recheck");
    let kinds: Vec<_> = view.resolved.iter().map(|r| r.requirement.kind).collect();
    assert_eq!(kinds, vec![VitalKind::Spo2, VitalKind::HeartFrequency, VitalKind::BloodGlucose]);
    assert!(matches!(
        view.resolved[0].outcome,
        Outcome::Known { value, timestamp: 10, freshness: Freshness::Fresh, range: RangeStatus::NoBounds, .. }
            if value == 97.0
    ));
    assert_eq!(view.resolved[1].outcome, Outcome::Unknown);
}

#[test]
fn bounded_requirement_in_range() {
    let store = store();
    store.ingest_reading(glucose(92.0, 0)).unwrap();
    let mut s = session();
    s.advance(&store, &EdgeLabel::Yes, 0).unwrap();
    s.advance(&store, &EdgeLabel::Yes, 0).unwrap();
    let view = s.advance(&store, &EdgeLabel::Next, 0).unwrap();
    assert!(matches!(view.resolved[2].outcome, Outcome::Known { range: RangeStatus::InRange, .. }));
}

#[test]
fn weight_unknown_on_empty_store() {
    let store = store();
    let mut s = session();
    s.advance(&store, &EdgeLabel::Yes, 0).unwrap();
    let view = s.advance(&store, &EdgeLabel::No, 0).unwrap();
    assert_eq!(view.node_id, "iv_glucose");
    assert!(view.resolved.iter().all(|r| r.outcome == Outcome::Unknown));
    assert_eq!(
        view.dosage,
        Some(DosageOutcome::Unavailable(DosageError::UnknownRule("glucose_iv".into())))
    );
}

#[test]
fn advance_errors() {
    let store = store();
    let mut s = session();
    let err = s.advance(&store, &EdgeLabel::Branch("maybe".into()), 0).unwrap_err();
    assert!(matches!(err, NavError::InvalidChoice { .. }));
    s.advance(&store, &EdgeLabel::No, 0).unwrap();
    s.advance(&store, &EdgeLabel::Next, 0).unwrap();
    assert_eq!(s.current(), "handover");
    assert_eq!(
        s.advance(&store, &EdgeLabel::Next, 0),
        Err(NavError::TerminalReached { node: "handover".into() })
    );
    // failed commands leave no trace
    assert_eq!(s.audit().len(), 2);
}

#[test]
fn auto_decide_clear_low_value() {
    let store = store();
    store.ingest_reading(glucose(40.0, 100)).unwrap();
    let mut s = session();
    let view = s.try_auto_decide(&store, 200).expect("20 mg/dL below 60 clears the 6 mg/dL margin");
    assert_eq!(view.node_id, "check_swallowing");
    let pending = view.pending_auto.expect("undo affordance");
    assert_eq!(pending.choice, EdgeLabel::Yes);
    assert_eq!(pending.value, 40.0);
    let event = s.audit().last().unwrap();
    assert_eq!(event.action.name(), "auto_advance");
    assert_eq!(event.auto_advance_is_sound(), Some(true));
}

#[test]
fn auto_decide_declines_within_margin() {
    let store = store();
    store.ingest_reading(glucose(58.0, 100)).unwrap();
    let mut s = session();
    assert!(s.try_auto_decide(&store, 200).is_none());
    assert!(s.audit().is_empty());
}

#[test]
fn auto_decide_clear_normal_value_takes_no_branch() {
    let store = store();
    store.ingest_reading(glucose(110.0, 100)).unwrap();
    let mut s = session();
    let view = s.try_auto_decide(&store, 100).unwrap();
    assert_eq!(view.node_id, "other_causes");
}

#[test]
fn stale_value_blocks_automation() {
    let store = store();
    store.ingest_reading(glucose(40.0, 0)).unwrap();
    let mut s = session();
    assert!(s.try_auto_decide(&store, 300_001).is_none());
}

#[test]
fn boundary_value_never_automated() {
    let store = store();
    store.ingest_reading(glucose(60.0, 0)).unwrap();
    assert!(session().try_auto_decide(&store, 0).is_none());
}

#[test]
fn undo_after_auto_suppresses_reskip() {
    let store = store();
    store.ingest_reading(glucose(40.0, 100)).unwrap();
    let mut s = session();
    s.try_auto_decide(&store, 100).unwrap();
    let view = s.undo(&store, 150).unwrap();
    assert_eq!(view.node_id, "assess_glucose");
    assert!(view.pending_auto.is_none());
    assert!(s.try_auto_decide(&store, 160).is_none());
    assert!(s.auto_decide_chain(&store, 160).is_empty());

    // a new reading lifts the suppression
    store.ingest_reading(glucose(38.0, 170)).unwrap();
    assert!(s.try_auto_decide(&store, 170).is_some());
}

#[test]
fn undo_errors_and_single_step() {
    let store = store();
    let mut s = session();
    assert_eq!(s.undo(&store, 0), Err(NavError::NothingToUndo));
    s.advance(&store, &EdgeLabel::Yes, 1).unwrap();
    s.advance(&store, &EdgeLabel::Yes, 2).unwrap();
    let view = s.undo(&store, 3).unwrap();
    assert_eq!(view.node_id, "check_swallowing");
    let kinds: Vec<_> = s.audit().iter().map(|e| e.action.name()).collect();
    assert_eq!(kinds, vec!["manual_advance", "manual_advance", "undo"]);
}

#[test]
fn verdicts() {
    let store = store();
    store.ingest_reading(glucose(40.0, 0)).unwrap();
    let mut s = session();
    let event = s.record_verdict(&store, VitalKind::BloodGlucose, true, 1).unwrap();
    assert_eq!(event.action.name(), "value_accepted");

    s.record_verdict(&store, VitalKind::BloodGlucose, false, 2).unwrap();
    assert!(s.try_auto_decide(&store, 3).is_none());
    let view = s.current_view(&store, 3);
    assert!(matches!(view.resolved[0].outcome, Outcome::Known { declined: true, .. }));

    assert_eq!(
        s.record_verdict(&store, VitalKind::Spo2, true, 4),
        Err(NavError::UnknownRequirement { node: "assess_glucose".into(), kind: VitalKind::Spo2 })
    );

    // quarantine is per reading; a newer one is trusted again
    store.ingest_reading(glucose(41.0, 5)).unwrap();
    assert!(s.try_auto_decide(&store, 5).is_some());
}

#[test]
fn dosage_on_medication_node() {
    let rules = crate::dosage::DosageRuleSet::parse(include_str!("../../../../fixtures/dosage_rules.json")).unwrap();
    let options = SessionOptions { rules: Arc::new(rules), ..Default::default() };
    let mut s = Session::start(SessionId(1), fixture(), options).unwrap();
    let store = store();
    store.set_database_entry(VitalKind::Age, 45.0, 0).unwrap();
    store.ingest_reading(VitalReading::new(VitalKind::Weight, 70.0, 0, "scale")).unwrap();
    s.advance(&store, &EdgeLabel::Yes, 0).unwrap();
    let view = s.advance(&store, &EdgeLabel::No, 0).unwrap();
    let Some(DosageOutcome::Computed(result)) = view.dosage else { panic!("{:?}", view.dosage) };
    assert_eq!(result.branch, "adult");
    assert_eq!(result.dose, 7000.0);
}

#[test]
fn restore_and_replay_path() {
    let store = store();
    store.ingest_reading(glucose(40.0, 0)).unwrap();
    let mut s = session();
    s.try_auto_decide(&store, 0).unwrap();
    s.advance(&store, &EdgeLabel::No, 1).unwrap();
    s.undo(&store, 2).unwrap();
    s.undo(&store, 3).unwrap();
    s.record_verdict(&store, VitalKind::BloodGlucose, false, 4).unwrap();
    let path = Session::replay_path(s.graph(), s.audit()).unwrap();
    assert_eq!(path, vec!["assess_glucose".to_string()]);

    let restored = Session::restore(SessionId(1), fixture(), SessionOptions::default(), s.audit().to_vec()).unwrap();
    assert_eq!(restored.current(), s.current());
    assert_eq!(restored.history(), s.history());
    // suppression and quarantine survive the rebuild
    let mut restored = restored;
    assert!(restored.try_auto_decide(&store, 5).is_none());
}

#[test]
fn inconsistent_events_rejected() {
    let store = store();
    let mut s = session();
    s.advance(&store, &EdgeLabel::Yes, 0).unwrap();
    let mut events = s.audit().to_vec();
    events[0].action = AuditAction::ManualAdvance { choice: Some(EdgeLabel::Yes), to: "handover".into() };
    let err = Session::restore(SessionId(1), fixture(), SessionOptions::default(), events).unwrap_err();
    assert!(matches!(err, NavError::ReplayMismatch { seq: 1, .. }));
}
