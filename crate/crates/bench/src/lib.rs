//! Benchmark harness: the model × data-length grid, self-telemetry and
//! reporting.

pub mod harness;
pub mod report;
pub mod telemetry;

pub use harness::{run, BenchmarkOutcome, BenchmarkRow, BenchmarkSpec, ModelTrainer, Trained, Trainer};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid benchmark spec: {0}")]
    Spec(String),
    #[error("report: {0}")]
    Report(String),
    #[error(transparent)]
    Core(#[from] prbcast_core::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, BenchError>;
