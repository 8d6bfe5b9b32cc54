//! Latest-value store for device measurements and control-center entries.
//!
//! Every accepted reading is appended to its kind's history. The latest
//! pointer for a kind only moves forward in timestamp order; a reading with
//! an equal timestamp replaces the previous one (later ingestion wins).

use std::collections::{BTreeMap, HashSet};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use crate::catalog::{SourceClass, VitalKind};

pub const CONTROL_CENTER: &str = "control_center";
pub const DEFAULT_STALENESS_MS: u64 = 300_000;

/// One timestamped value in the kind's canonical unit. Timestamps are
/// milliseconds since the session epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VitalReading {
    pub kind: VitalKind,
    pub value: f64,
    pub timestamp: u64,
    pub origin: String,
}

/// Bit-exact identity of a reading.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ReadingKey {
    pub kind: VitalKind,
    pub value_bits: u64,
    pub timestamp: u64,
    pub origin: String,
}

impl VitalReading {
    pub fn new(kind: VitalKind, value: f64, timestamp: u64, origin: impl Into<String>) -> Self {
        VitalReading { kind, value, timestamp, origin: origin.into() }
    }

    pub fn key(&self) -> ReadingKey {
        ReadingKey {
            kind: self.kind,
            value_bits: self.value.to_bits(),
            timestamp: self.timestamp,
            origin: self.origin.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum StoreError {
    #[error("value {value} is outside the physical range of {kind}")]
    UnitMismatch { kind: VitalKind, value: f64 },
    #[error("{0} is a device measurement and cannot be set as a database entry")]
    SourceClassViolation(VitalKind),
}

impl StoreError {
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::UnitMismatch { .. } => "unit_mismatch",
            StoreError::SourceClassViolation(_) => "source_class_violation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ack {
    /// Appended to history; `latest_updated` tells whether the latest pointer moved.
    Accepted { latest_updated: bool },
    /// An identical reading was already stored.
    Duplicate,
}

impl Ack {
    pub fn is_new(self) -> bool {
        matches!(self, Ack::Accepted { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum Freshness {
    Fresh,
    Stale { age_ms: u64 },
    Unknown,
}

impl Freshness {
    pub fn is_fresh(self) -> bool {
        self == Freshness::Fresh
    }
}

/// Staleness windows per kind. `None` means the kind never goes stale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StalenessPolicy {
    pub default_ms: u64,
    #[serde(default)]
    pub overrides: BTreeMap<VitalKind, Option<u64>>,
}

impl Default for StalenessPolicy {
    fn default() -> Self {
        StalenessPolicy::with_default(DEFAULT_STALENESS_MS)
    }
}

impl StalenessPolicy {
    /// Uniform window, except that static kinds (age, weight) never go stale.
    pub fn with_default(default_ms: u64) -> Self {
        let overrides = VitalKind::ALL
            .iter()
            .filter(|k| k.is_static())
            .map(|&k| (k, None))
            .collect();
        StalenessPolicy { default_ms, overrides }
    }

    pub fn window(&self, kind: VitalKind) -> Option<u64> {
        match self.overrides.get(&kind) {
            Some(window) => *window,
            None => Some(self.default_ms),
        }
    }

    pub fn classify(&self, reading: &VitalReading, now: u64) -> Freshness {
        let age = now.saturating_sub(reading.timestamp);
        match self.window(reading.kind) {
            Some(window) if age > window => Freshness::Stale { age_ms: age },
            _ => Freshness::Fresh,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub reading: VitalReading,
    pub freshness: Freshness,
}

#[derive(Debug, Default)]
struct Inner {
    history: BTreeMap<VitalKind, Vec<VitalReading>>,
    latest: BTreeMap<VitalKind, VitalReading>,
    seen: HashSet<ReadingKey>,
}

/// Thread-safe patient record. Readers always see a consistent latest map.
#[derive(Debug, Default)]
pub struct VitalStore {
    policy: StalenessPolicy,
    inner: RwLock<Inner>,
}

impl VitalStore {
    pub fn new(policy: StalenessPolicy) -> Self {
        VitalStore { policy, inner: RwLock::default() }
    }

    pub fn policy(&self) -> &StalenessPolicy {
        &self.policy
    }

    pub fn ingest_reading(&self, reading: VitalReading) -> Result<Ack, StoreError> {
        if !reading.kind.accepts(reading.value) {
            return Err(StoreError::UnitMismatch { kind: reading.kind, value: reading.value });
        }
        let mut inner = self.inner.write().expect("store lock poisoned");
        if !inner.seen.insert(reading.key()) {
            return Ok(Ack::Duplicate);
        }
        let latest_updated = match inner.latest.get(&reading.kind) {
            Some(current) => reading.timestamp >= current.timestamp,
            None => true,
        };
        if latest_updated {
            inner.latest.insert(reading.kind, reading.clone());
        }
        inner.history.entry(reading.kind).or_default().push(reading);
        Ok(Ack::Accepted { latest_updated })
    }

    pub fn set_database_entry(&self, kind: VitalKind, value: f64, t: u64) -> Result<Ack, StoreError> {
        if kind.source_class() != SourceClass::DatabaseEntry {
            return Err(StoreError::SourceClassViolation(kind));
        }
        self.ingest_reading(VitalReading::new(kind, value, t, CONTROL_CENTER))
    }

    /// Latest reading for `kind` with its freshness, or `None` when unknown.
    pub fn latest(&self, kind: VitalKind, now: u64) -> Option<Observation> {
        let inner = self.inner.read().expect("store lock poisoned");
        inner.latest.get(&kind).map(|reading| Observation {
            freshness: self.policy.classify(reading, now),
            reading: reading.clone(),
        })
    }

    pub fn freshness(&self, kind: VitalKind, now: u64) -> Freshness {
        self.latest(kind, now).map_or(Freshness::Unknown, |o| o.freshness)
    }

    pub fn snapshot_all(&self, now: u64) -> BTreeMap<VitalKind, Observation> {
        let inner = self.inner.read().expect("store lock poisoned");
        inner
            .latest
            .iter()
            .map(|(&kind, reading)| {
                let obs = Observation {
                    freshness: self.policy.classify(reading, now),
                    reading: reading.clone(),
                };
                (kind, obs)
            })
            .collect()
    }

    /// Latest map without freshness classification.
    pub fn latest_map(&self) -> BTreeMap<VitalKind, VitalReading> {
        self.inner.read().expect("store lock poisoned").latest.clone()
    }

    pub fn history(&self, kind: VitalKind) -> Vec<VitalReading> {
        let inner = self.inner.read().expect("store lock poisoned");
        inner.history.get(&kind).cloned().unwrap_or_default()
    }

    pub fn history_len(&self, kind: VitalKind) -> usize {
        let inner = self.inner.read().expect("store lock poisoned");
        inner.history.get(&kind).map_or(0, Vec::len)
    }
}
