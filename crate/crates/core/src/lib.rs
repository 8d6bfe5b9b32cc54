//! Navigation of expert-defined emergency treatment graphs with live vital
//! signs: graph model and validation, a latest-value vital store, the device
//! wire format, a session state machine with auto-decide and undo, dosage
//! rules, threshold alarms, and a journaled engine that ties them together.

pub mod alarm;
pub mod catalog;
pub mod dosage;
pub mod engine;
pub mod graph;
pub mod navigator;
pub mod scenario;
pub mod stats;
pub mod store;
#[cfg(feature = "testkit")]
pub mod testkit;
pub mod validate;
pub mod wire;

pub use catalog::{SourceClass, VitalKind};
pub use engine::{Engine, EngineConfig, EngineError, EngineEvent, SessionLog};
pub use graph::{parse_graph, serialize_graph, EdgeLabel, TreatmentGraph};
pub use navigator::{Session, SessionId, StepView};
pub use store::{Freshness, VitalReading, VitalStore};
