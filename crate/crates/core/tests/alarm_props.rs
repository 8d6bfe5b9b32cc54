use proptest::prelude::*;
use rand::Rng;
use vitalnav_core::alarm::{AlarmContext, AlarmMonitor, AlarmState, AlarmThreshold, OperatorVerdict, ThresholdSource};
use vitalnav_core::store::{StalenessPolicy, VitalReading, VitalStore};
use vitalnav_core::testkit;
use vitalnav_core::VitalKind;

fn spo2_min_90() -> Vec<AlarmThreshold> {
    vec![AlarmThreshold { kind: VitalKind::Spo2, min: Some(90.0), max: None, source: ThresholdSource::GlobalTable, target: None }]
}

const NO_CONTEXT: AlarmContext<'static> = AlarmContext { session: None, step: None };

#[test]
fn ten_breaches_in_window_raise_one_alarm() {
    let store = VitalStore::new(StalenessPolicy::default());
    let mut monitor = AlarmMonitor::new(60_000);
    let thresholds = spo2_min_90();
    let mut raised = Vec::new();
    for i in 0..10u64 {
        let r = VitalReading::new(VitalKind::Spo2, 85.0 - i as f64, i * 5_000, "zoll");
        store.ingest_reading(r.clone()).unwrap();
        raised.extend(monitor.evaluate_reading(&r, &thresholds, &store.snapshot_all(r.timestamp), NO_CONTEXT));
    }
    assert_eq!(raised.len(), 1);
    let first = raised[0].clone();

    let late = VitalReading::new(VitalKind::Spo2, 80.0, 60_000, "zoll");
    store.ingest_reading(late.clone()).unwrap();
    let second = monitor.evaluate_reading(&late, &thresholds, &store.snapshot_all(60_000), NO_CONTEXT);
    assert_eq!(second.len(), 1);
    // the first alarm's copy of the vitals is unaffected
    assert_eq!(monitor.get(first.id).unwrap().snapshot, first.snapshot);
    assert_eq!(first.snapshot[&VitalKind::Spo2].reading.value, 85.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn open_alarms_respect_thresholds_and_debounce(seed in any::<u64>(), debounce in 1u64..100_000) {
        let mut rng = testkit::rng(seed);
        let store = VitalStore::new(StalenessPolicy::default());
        let mut monitor = AlarmMonitor::new(debounce);
        let thresholds = spo2_min_90();
        let mut t = 0;
        for _ in 0..50 {
            t += rng.random_range(0..30_000);
            if rng.random_bool(0.1) {
                if let Some(open) = monitor.list_alarms(Some(AlarmState::Open)).first().map(|a| a.id) {
                    monitor.resolve(open, OperatorVerdict::dismiss(t)).unwrap();
                }
                continue;
            }
            let r = VitalReading::new(VitalKind::Spo2, rng.random_range(70..=100) as f64, t, "d");
            let _ = store.ingest_reading(r.clone());
            let snapshot = store.snapshot_all(t);
            let before: Vec<_> = monitor.list_alarms(None).into_iter().cloned().collect();
            let raised = monitor.evaluate_reading(&r, &thresholds, &snapshot, NO_CONTEXT);
            let recent_open = before.iter().any(|a| a.state == AlarmState::Open && t - a.raised_at < debounce);
            let expect = r.value < 90.0 && !recent_open;
            prop_assert_eq!(raised.len(), usize::from(expect));
            // earlier alarms are never rewritten by later readings
            for (old, now) in before.iter().zip(monitor.list_alarms(None)) {
                prop_assert_eq!(old, now);
            }
        }
        for alarm in monitor.list_alarms(Some(AlarmState::Open)) {
            prop_assert!(alarm.threshold.violated_by(alarm.reading.value));
        }
    }
}
