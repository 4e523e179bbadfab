//! Analytical engine: split, train, forecast the next horizon.

use std::time::Instant;

use prbcast_core::models::{evaluate, train, EstimatorConfig, Predictor};
use prbcast_core::ts::{split_train_test, to_quantiles, QuantileForecast, SampleForecast, TimeSeries, NUM_LEVELS};

use crate::{RappError, Result};

/// Fraction of the history used for training; the rest is held out.
pub const TRAIN_FRACTION: f64 = 0.8;

/// Shortest history accepted by [`run_analytics`]: the training slice must
/// hold one full window and the held-out slice at least one hour.
pub fn min_history(cfg: &EstimatorConfig) -> usize {
    let window = cfg.context_length + cfg.horizon;
    let mut n = window + 1;
    while ((n as f64) * TRAIN_FRACTION).floor() < window as f64 {
        n += 1;
    }
    n
}

#[derive(Debug, Clone)]
pub struct AnalyticsOutput {
    pub predictor: Predictor,
    pub quantiles: QuantileForecast,
    /// MSE on the held-out slice, when it spans at least one horizon.
    pub holdout_mse: Option<f64>,
    pub train_seconds: f64,
    pub predict_seconds: f64,
}

/// Percentile rows of a forecast. A single path (the deterministic
/// baseline) gives every percentile the same value.
pub fn quantiles_of(f: &SampleForecast) -> Result<QuantileForecast> {
    if f.num_samples() >= 2 {
        return Ok(to_quantiles(f)?);
    }
    let rows = vec![f.samples()[0].clone(); NUM_LEVELS];
    Ok(QuantileForecast::from_rows(f.start(), rows)?)
}

/// Trains on the first 80 % of `history` and forecasts the horizon that
/// follows the whole history.
pub fn run_analytics(history: &TimeSeries, cfg: &EstimatorConfig, seed: u64) -> Result<AnalyticsOutput> {
    let needed = min_history(cfg);
    if history.len() < needed {
        return Err(RappError::InsufficientHistory {
            tenant: history.tenant_id().to_string(),
            needed,
            got: history.len(),
        });
    }
    let (train_part, test_part) = split_train_test(history, TRAIN_FRACTION)?;
    let predictor = train(&train_part, cfg)?;
    let train_seconds = predictor.metadata().train_seconds;

    let holdout_mse = if test_part.len() >= cfg.horizon {
        Some(evaluate(&predictor, &train_part, &test_part, seed)?.mse)
    } else {
        None
    };

    let t = Instant::now();
    let forecast = predictor.predict(history, seed)?;
    let quantiles = quantiles_of(&forecast)?;
    let predict_seconds = t.elapsed().as_secs_f64();
    Ok(AnalyticsOutput {
        predictor,
        quantiles,
        holdout_mse,
        train_seconds,
        predict_seconds,
    })
}
