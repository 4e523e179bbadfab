//! Probabilistic PRB-demand forecasting: time-series containers and metrics,
//! a small autodiff core, the four estimators, and a seeded traffic generator.

pub mod error;
pub mod models;
pub mod nn;
pub mod traffic;
pub mod ts;

pub use error::{Error, Result};
