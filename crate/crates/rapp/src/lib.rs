//! Non-RT RIC rApp: monitoring store, analytical engine, decision engine and
//! actuator, wired into a message-driven pipeline over the O1 link.

pub mod actuator;
pub mod analytics;
pub mod events;
pub mod pipeline;
pub mod policy;
pub mod store;

pub use actuator::{actuate, allocation_message, AllocationSink, RetryPolicy};
pub use analytics::{min_history, run_analytics, AnalyticsOutput};
pub use events::EventLog;
pub use pipeline::{run, run_connected, DecisionRecord, RappConfig, RunReport};
pub use policy::{decide, CostRatio, Decision, PolicyConfig, Provenance, Rounding};
pub use store::{IngestError, Ingested, MonitoringStore};

#[derive(Debug, thiserror::Error)]
pub enum RappError {
    #[error("tenant {tenant}: {got} hours of history, need {needed}")]
    InsufficientHistory { tenant: String, needed: usize, got: usize },
    #[error("ingest rejected: {0}")]
    Ingest(#[from] IngestError),
    #[error("allocation {decision_id} failed after {attempts} attempts: {last}")]
    Actuation { decision_id: u64, attempts: u32, last: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] prbcast_core::Error),
    #[error(transparent)]
    O1(#[from] prbcast_o1::O1Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, RappError>;
