use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use proptest::prelude::*;
use rand::Rng;
use vitalnav_core::store::{Freshness, StalenessPolicy, VitalReading, VitalStore};
use vitalnav_core::testkit::{self, oracle};
use vitalnav_core::wire::{replay_trace, ReplayOptions, Speed, TraceFile};
use vitalnav_core::VitalKind;

fn readings(seed: u64, len: usize) -> Vec<VitalReading> {
    let mut rng = testkit::rng(seed);
    let kinds = [VitalKind::Spo2, VitalKind::HeartFrequency, VitalKind::Weight];
    let mut out: Vec<VitalReading> = Vec::new();
    for _ in 0..len {
        // repeats and collisions on purpose
        if !out.is_empty() && rng.random_bool(0.1) {
            let i = rng.random_range(0..out.len());
            out.push(out[i].clone());
            continue;
        }
        let kind = kinds[rng.random_range(0..kinds.len())];
        let value = if rng.random_bool(0.05) { 1e6 } else { testkit::value_for(&mut rng, kind) };
        out.push(VitalReading::new(kind, value, rng.random_range(0..20), format!("d{}", rng.random_range(0..2))));
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn latest_is_newest_with_later_arrival_winning_ties(seed in any::<u64>(), len in 0usize..60) {
        let rs = readings(seed, len);
        let store = VitalStore::new(StalenessPolicy::default());
        for r in &rs {
            let _ = store.ingest_reading(r.clone());
        }
        prop_assert_eq!(store.latest_map(), oracle::fold_latest(&rs));
    }

    #[test]
    fn history_counts_distinct_accepted_readings(seed in any::<u64>(), len in 0usize..60) {
        let rs = readings(seed, len);
        let store = VitalStore::new(StalenessPolicy::default());
        for r in &rs {
            let _ = store.ingest_reading(r.clone());
        }
        let mut distinct: BTreeMap<VitalKind, BTreeSet<(u64, u64, String)>> = BTreeMap::new();
        for r in rs.iter().filter(|r| r.kind.accepts(r.value)) {
            distinct.entry(r.kind).or_default().insert((r.value.to_bits(), r.timestamp, r.origin.clone()));
        }
        for kind in [VitalKind::Spo2, VitalKind::HeartFrequency, VitalKind::Weight] {
            prop_assert_eq!(store.history_len(kind), distinct.get(&kind).map_or(0, BTreeSet::len));
        }
    }

    #[test]
    fn freshness_only_decays(t in 0u64..1_000_000, a in 0u64..1_000_000, b in 0u64..1_000_000, window in 1u64..600_000) {
        let store = VitalStore::new(StalenessPolicy::with_default(window));
        store.ingest_reading(VitalReading::new(VitalKind::Spo2, 97.0, t, "d")).unwrap();
        store.ingest_reading(VitalReading::new(VitalKind::Weight, 70.0, t, "d")).unwrap();
        let (early, late) = if a <= b { (a, b) } else { (b, a) };
        let stale = |now| !store.freshness(VitalKind::Spo2, now).is_fresh();
        prop_assert!(!stale(early) || stale(late));
        prop_assert_eq!(stale(late), late.saturating_sub(t) > window);
        prop_assert_eq!(store.freshness(VitalKind::Weight, late), Freshness::Fresh);
    }

    #[test]
    fn instant_replay_equals_direct_fold(seed in any::<u64>()) {
        let trace = testkit::random_trace(&mut testkit::rng(seed), 80);
        let reparsed = TraceFile::parse(&trace.to_json()).unwrap();
        prop_assert_eq!(&reparsed, &trace);

        let replayed = VitalStore::new(StalenessPolicy::default());
        let report = replay_trace(&trace, ReplayOptions::default(), |r| replayed.ingest_reading(r).map(drop));
        let direct = VitalStore::new(StalenessPolicy::default());
        for entry in trace.entries() {
            let _ = direct.ingest_reading(entry.message.clone().into_reading());
        }
        prop_assert_eq!(report.delivered + report.rejected, trace.len());
        prop_assert_eq!(replayed.latest_map(), direct.latest_map());
        for kind in VitalKind::ALL {
            prop_assert_eq!(replayed.history(kind), direct.history(kind));
        }
    }

    #[test]
    fn dropping_lines_is_seeded(seed in any::<u64>(), fraction in 0.0f64..1.0) {
        let trace = testkit::random_trace(&mut testkit::rng(seed), 50);
        let options = ReplayOptions { speed: Speed::Instant, drop_fraction: fraction, seed };
        let run = || {
            let mut got = Vec::new();
            let report = replay_trace(&trace, options, |r| { got.push(r); Ok(()) });
            (report, got)
        };
        let (first, a) = run();
        let (second, b) = run();
        prop_assert_eq!(first, second);
        prop_assert_eq!(a, b);
        prop_assert_eq!(first.delivered + first.skipped, trace.len());
    }
}

#[test]
fn readers_see_whole_readings_during_writes() {
    let store = Arc::new(VitalStore::new(StalenessPolicy::default()));
    let writer = {
        let store = store.clone();
        std::thread::spawn(move || {
            for t in 0..2_000u64 {
                let value = (t % 100) as f64;
                store.ingest_reading(VitalReading::new(VitalKind::Spo2, value, t, "w")).unwrap();
            }
        })
    };
    let mut last = 0;
    while !writer.is_finished() {
        if let Some(obs) = store.latest(VitalKind::Spo2, 0) {
            assert_eq!(obs.reading.value, (obs.reading.timestamp % 100) as f64);
            assert!(obs.reading.timestamp >= last);
            last = obs.reading.timestamp;
        }
    }
    writer.join().unwrap();
    assert_eq!(store.history_len(VitalKind::Spo2), 2_000);
}
