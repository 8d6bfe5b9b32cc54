use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Instant;

use tokio::sync::broadcast;
use vitalnav_core::engine::EngineEvent;
use vitalnav_core::{Engine, EngineError, VitalReading};

use crate::listener::{Delivery, ListenerStats, ReadingSink};

pub const EVENT_BUFFER: usize = 256;

/// Milliseconds on the service timeline.
#[derive(Debug)]
pub enum Clock {
    /// Time since the service started.
    Monotonic(Instant),
    /// Set by hand; for tests.
    Manual(AtomicU64),
}

impl Clock {
    pub fn now(&self) -> u64 {
        match self {
            Clock::Monotonic(start) => start.elapsed().as_millis() as u64,
            Clock::Manual(t) => t.load(Ordering::SeqCst),
        }
    }

    pub fn set(&self, t: u64) {
        if let Clock::Manual(slot) = self {
            slot.store(t, Ordering::SeqCst);
        }
    }
}

/// One server-sent event, already serialized.
#[derive(Debug, Clone, PartialEq)]
pub struct Broadcast {
    pub name: &'static str,
    pub data: String,
}

impl Broadcast {
    fn from_event(event: &EngineEvent) -> Self {
        let name = match event {
            EngineEvent::Step { .. } => "step",
            EngineEvent::AutoAdvanced { .. } => "auto_advanced",
            EngineEvent::AlarmRaised { .. } => "alarm_raised",
            EngineEvent::AlarmResolved { .. } => "alarm_resolved",
            EngineEvent::Vitals { .. } => "vitals",
        };
        let data = serde_json::to_string(event).expect("event serialization is infallible");
        Broadcast { name, data }
    }
}

#[derive(Debug)]
pub struct AppState {
    engine: Mutex<Engine>,
    events: broadcast::Sender<Arc<Broadcast>>,
    clock: Clock,
    devices: Arc<ListenerStats>,
}

impl AppState {
    pub fn new(engine: Engine, clock: Clock) -> Self {
        let (events, _) = broadcast::channel(EVENT_BUFFER);
        AppState { engine: Mutex::new(engine), events, clock, devices: Arc::default() }
    }

    pub fn now(&self) -> u64 {
        self.clock.now()
    }

    pub fn clock(&self) -> &Clock {
        &self.clock
    }

    pub fn devices(&self) -> &Arc<ListenerStats> {
        &self.devices
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Arc<Broadcast>> {
        self.events.subscribe()
    }

    /// Shared read access; nothing is published.
    pub fn read<T>(&self, f: impl FnOnce(&Engine, u64) -> T) -> T {
        let engine = self.lock();
        f(&engine, self.now())
    }

    /// Runs a command and publishes the events it produced. Publishing
    /// happens under the engine lock so subscribers see journal order.
    pub fn mutate<T>(&self, f: impl FnOnce(&mut Engine, u64) -> Result<T, EngineError>) -> Result<T, EngineError> {
        let mut engine = self.lock();
        let result = f(&mut engine, self.now());
        for event in engine.drain_events() {
            // no subscribers is fine
            let _ = self.events.send(Arc::new(Broadcast::from_event(&event)));
        }
        result
    }

    pub fn ingest(&self, reading: VitalReading) -> Delivery {
        match self.mutate(|engine, now| engine.ingest(reading, now)) {
            Ok(outcome) if outcome.accepted => Delivery::Ingested,
            Ok(_) => Delivery::Duplicate,
            Err(e) => {
                tracing::debug!(error = %e, "device reading rejected");
                Delivery::Rejected
            }
        }
    }

    pub fn reading_sink(self: &Arc<Self>) -> ReadingSink {
        let state = self.clone();
        Arc::new(move |reading| state.ingest(reading))
    }

    fn lock(&self) -> MutexGuard<'_, Engine> {
        self.engine.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }
}
