//! Device wire format and trace replay.
//!
//! Devices send one JSON object per `\n`-terminated line:
//! `{"device":"zoll-1","kind":"spo2","value":97,"t":1200}`. A trace file is a
//! JSON array of `[offset_ms, message]` pairs with non-decreasing offsets.

use std::time::Duration;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::catalog::VitalKind;
use crate::store::{StoreError, VitalReading};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceMessage {
    pub device: String,
    pub kind: VitalKind,
    pub value: f64,
    #[serde(rename = "t")]
    pub timestamp: u64,
}

impl DeviceMessage {
    pub fn into_reading(self) -> VitalReading {
        VitalReading::new(self.kind, self.value, self.timestamp, self.device)
    }

    pub fn to_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("message serialization is infallible");
        line.push('\n');
        line
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProtocolError {
    #[error("line is not valid UTF-8")]
    NotUtf8,
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("unknown vital kind `{0}`")]
    UnknownKind(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMessage {
    device: String,
    kind: String,
    value: f64,
    t: u64,
}

impl TryFrom<RawMessage> for DeviceMessage {
    type Error = ProtocolError;

    fn try_from(raw: RawMessage) -> Result<Self, Self::Error> {
        let kind = raw
            .kind
            .parse()
            .map_err(|_| ProtocolError::UnknownKind(raw.kind.clone()))?;
        Ok(DeviceMessage { device: raw.device, kind, value: raw.value, timestamp: raw.t })
    }
}

/// Decodes one line of the device wire format. A trailing `\n` or `\r\n` is ignored.
pub fn decode_message(line: &[u8]) -> Result<DeviceMessage, ProtocolError> {
    let text = std::str::from_utf8(line).map_err(|_| ProtocolError::NotUtf8)?;
    let text = text.trim_end_matches(['\n', '\r']);
    let raw: RawMessage =
        serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    raw.try_into()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TraceFormatError {
    #[error("trace is not a valid JSON array of [offset_ms, message] pairs: {0}")]
    Syntax(String),
    #[error("entry {index}: {source}")]
    Message { index: usize, source: ProtocolError },
    #[error("entry {index}: offset {offset} is smaller than the previous offset {previous}")]
    DecreasingOffset { index: usize, offset: u64, previous: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub offset_ms: u64,
    pub message: DeviceMessage,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceFile {
    entries: Vec<TraceEntry>,
}

impl TraceFile {
    pub fn new(entries: Vec<TraceEntry>) -> Result<Self, TraceFormatError> {
        for (index, pair) in entries.windows(2).enumerate() {
            if pair[1].offset_ms < pair[0].offset_ms {
                return Err(TraceFormatError::DecreasingOffset {
                    index: index + 1,
                    offset: pair[1].offset_ms,
                    previous: pair[0].offset_ms,
                });
            }
        }
        Ok(TraceFile { entries })
    }

    pub fn parse(text: &str) -> Result<Self, TraceFormatError> {
        let raw: Vec<(u64, serde_json::Value)> =
            serde_json::from_str(text).map_err(|e| TraceFormatError::Syntax(e.to_string()))?;
        let mut entries = Vec::with_capacity(raw.len());
        for (index, (offset_ms, value)) in raw.into_iter().enumerate() {
            let message = serde_json::from_value::<RawMessage>(value)
                .map_err(|e| ProtocolError::Malformed(e.to_string()))
                .and_then(DeviceMessage::try_from)
                .map_err(|source| TraceFormatError::Message { index, source })?;
            entries.push(TraceEntry { offset_ms, message });
        }
        TraceFile::new(entries)
    }

    pub fn to_json(&self) -> String {
        let pairs: Vec<_> = self.entries.iter().map(|e| (e.offset_ms, &e.message)).collect();
        serde_json::to_string_pretty(&pairs).expect("trace serialization is infallible")
    }

    pub fn entries(&self) -> &[TraceEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Speed {
    /// Deliver synchronously without waiting.
    Instant,
    /// Wait `offset delta / multiplier` between messages.
    Scaled(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayOptions {
    pub speed: Speed,
    /// Fraction of messages dropped to simulate a lossy link.
    pub drop_fraction: f64,
    pub seed: u64,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        ReplayOptions { speed: Speed::Instant, drop_fraction: 0.0, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub delivered: usize,
    /// Dropped by the simulated link.
    pub skipped: usize,
    /// Refused by the sink.
    pub rejected: usize,
}

/// Delivers every trace message to `sink` in offset order.
pub fn replay_trace<F>(trace: &TraceFile, options: ReplayOptions, mut sink: F) -> ReplayReport
where
    F: FnMut(VitalReading) -> Result<(), StoreError>,
{
    let mut rng = StdRng::seed_from_u64(options.seed);
    let mut report = ReplayReport::default();
    let mut previous_offset = trace.entries.first().map_or(0, |e| e.offset_ms);
    for entry in &trace.entries {
        if let Speed::Scaled(multiplier) = options.speed {
            let delta = entry.offset_ms - previous_offset;
            if delta > 0 && multiplier.is_finite() && multiplier > 0.0 {
                std::thread::sleep(Duration::from_secs_f64(delta as f64 / 1000.0 / multiplier));
            }
        }
        previous_offset = entry.offset_ms;
        if options.drop_fraction > 0.0 && rng.random::<f64>() < options.drop_fraction {
            report.skipped += 1;
            continue;
        }
        match sink(entry.message.clone().into_reading()) {
            Ok(()) => report.delivered += 1,
            Err(_) => report.rejected += 1,
        }
    }
    report
}
