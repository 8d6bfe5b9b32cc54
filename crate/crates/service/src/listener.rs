//! Line-delimited JSON device listener.
//!
//! Each connection is read line by line and every decoded message is handed
//! to the sink in arrival order. A malformed line is counted and skipped; the
//! connection stays open.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::Serialize;
use tokio::io::{AsyncBufReadExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use vitalnav_core::wire::decode_message;
use vitalnav_core::VitalReading;

/// What the sink did with a decoded reading.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delivery {
    Ingested,
    Duplicate,
    Rejected,
}

pub type ReadingSink = Arc<dyn Fn(VitalReading) -> Delivery + Send + Sync>;

#[derive(Debug, Default)]
pub struct ListenerStats {
    connections: AtomicU64,
    lines: AtomicU64,
    ingested: AtomicU64,
    duplicates: AtomicU64,
    rejected: AtomicU64,
    protocol_errors: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ListenerCounts {
    pub connections: u64,
    pub lines: u64,
    pub ingested: u64,
    pub duplicates: u64,
    pub rejected: u64,
    pub protocol_errors: u64,
}

impl ListenerStats {
    pub fn counts(&self) -> ListenerCounts {
        let get = |c: &AtomicU64| c.load(Ordering::SeqCst);
        ListenerCounts {
            connections: get(&self.connections),
            lines: get(&self.lines),
            ingested: get(&self.ingested),
            duplicates: get(&self.duplicates),
            rejected: get(&self.rejected),
            protocol_errors: get(&self.protocol_errors),
        }
    }

    fn bump(counter: &AtomicU64) {
        counter.fetch_add(1, Ordering::SeqCst);
    }
}

/// Accepts connections until the task is dropped or aborted.
pub async fn run_listener(listener: TcpListener, sink: ReadingSink, stats: Arc<ListenerStats>) {
    loop {
        match listener.accept().await {
            Ok((stream, peer)) => {
                ListenerStats::bump(&stats.connections);
                tracing::debug!(%peer, "device connected");
                tokio::spawn(handle_connection(stream, sink.clone(), stats.clone()));
            }
            Err(e) => tracing::warn!(error = %e, "accept failed"),
        }
    }
}

async fn handle_connection(stream: TcpStream, sink: ReadingSink, stats: Arc<ListenerStats>) {
    let mut reader = BufReader::new(stream);
    let mut line = Vec::new();
    loop {
        line.clear();
        match reader.read_until(b'\n', &mut line).await {
            Ok(0) => break,
            Ok(_) => {}
            Err(e) => {
                tracing::debug!(error = %e, "device connection closed");
                break;
            }
        }
        let trimmed = line.trim_ascii();
        if trimmed.is_empty() {
            continue;
        }
        ListenerStats::bump(&stats.lines);
        match decode_message(trimmed) {
            Ok(message) => match sink(message.into_reading()) {
                Delivery::Ingested => ListenerStats::bump(&stats.ingested),
                Delivery::Duplicate => ListenerStats::bump(&stats.duplicates),
                Delivery::Rejected => ListenerStats::bump(&stats.rejected),
            },
            Err(e) => {
                tracing::debug!(error = %e, "skipping malformed device line");
                ListenerStats::bump(&stats.protocol_errors);
            }
        }
    }
}
