//! The benchmark grid: models × data lengths on one generated tenant.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use prbcast_core::models::{evaluate, train, EstimatorConfig, EstimatorKind, Forecaster, Predictor};
use prbcast_core::traffic::{default_start, generate, TenantProfile, BENCHMARK_WEEKS, HOURS_PER_WEEK};
use prbcast_core::ts::{split_train_test, TimeSeries};
use serde::{Deserialize, Serialize};

use crate::telemetry::{PhaseTrace, Recorder};
use crate::{BenchError, Result};

pub const TRAIN_FRACTION: f64 = 0.8;
pub const TENANT_ID: &str = "bench";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub models: Vec<EstimatorKind>,
    pub weeks: Vec<usize>,
    pub seed: u64,
    pub repetitions: usize,
    pub out_dir: PathBuf,
    pub profile: TenantProfile,
    /// One thread per model. Timings are then not comparable.
    pub parallel: bool,
    pub telemetry_interval_ms: u64,
}

impl BenchmarkSpec {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            models: EstimatorKind::ALL.to_vec(),
            weeks: BENCHMARK_WEEKS.to_vec(),
            seed: 0,
            repetitions: 3,
            out_dir: out_dir.into(),
            profile: TenantProfile::benchmark(),
            parallel: false,
            telemetry_interval_ms: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() || self.weeks.is_empty() {
            return Err(BenchError::Spec("models and weeks must be non-empty".into()));
        }
        if let Some(w) = self.weeks.iter().find(|w| !BENCHMARK_WEEKS.contains(w)) {
            return Err(BenchError::Spec(format!("{w} weeks is not one of {BENCHMARK_WEEKS:?}")));
        }
        if self.repetitions == 0 {
            return Err(BenchError::Spec("repetitions must be at least 1".into()));
        }
        self.profile.validate()?;
        Ok(())
    }

    pub fn estimator(&self, kind: EstimatorKind) -> EstimatorConfig {
        EstimatorConfig::new(kind).with_seed(self.seed)
    }
}

/// Aggregated result of one (model, weeks) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub model: EstimatorKind,
    pub weeks: usize,
    /// From the first repetition; identical across repetitions.
    pub mse: Option<f64>,
    pub train_seconds_mean: Option<f64>,
    pub train_seconds_sd: Option<f64>,
    /// Mean wall clock per 24-hour forecast block.
    pub predict_ms_mean: Option<f64>,
    pub predict_ms_sd: Option<f64>,
    pub peak_memory_bytes: Option<u64>,
    pub repetitions: usize,
    pub error: Option<String>,
}

impl BenchmarkRow {
    pub(crate) fn failed(model: EstimatorKind, weeks: usize, error: String) -> Self {
        Self {
            model,
            weeks,
            mse: None,
            train_seconds_mean: None,
            train_seconds_sd: None,
            predict_ms_mean: None,
            predict_ms_sd: None,
            peak_memory_bytes: None,
            repetitions: 0,
            error: Some(error),
        }
    }
}

pub struct Trained {
    pub forecaster: Box<dyn Forecaster>,
    pub train_seconds: f64,
    /// Saved next to the results when present.
    pub predictor: Option<Predictor>,
}

/// Produces a forecaster from a training slice. Tests inject oracles here.
pub trait Trainer: Sync {
    fn train(&self, series: &TimeSeries, cfg: &EstimatorConfig) -> prbcast_core::Result<Trained>;
}

pub struct ModelTrainer;

impl Trainer for ModelTrainer {
    fn train(&self, series: &TimeSeries, cfg: &EstimatorConfig) -> prbcast_core::Result<Trained> {
        let p = train(series, cfg)?;
        Ok(Trained {
            train_seconds: p.metadata().train_seconds,
            forecaster: Box::new(p.clone()),
            predictor: Some(p),
        })
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkOutcome {
    pub rows: Vec<BenchmarkRow>,
    pub results_csv: PathBuf,
    pub summary_json: PathBuf,
    /// Per model: the saved predictor stem for each data length.
    pub predictors: BTreeMap<String, PathBuf>,
    /// `(model, phase)` traces of the longest data length, repetition 1.
    pub telemetry: Vec<(EstimatorKind, PhaseTrace)>,
}

pub fn benchmark_series(spec: &BenchmarkSpec, weeks: usize) -> Result<TimeSeries> {
    Ok(generate(TENANT_ID, &spec.profile, default_start(), weeks * HOURS_PER_WEEK, spec.seed)?)
}

struct CellOutput {
    row: BenchmarkRow,
    predictor: Option<Predictor>,
    traces: Vec<PhaseTrace>,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn run_cell(spec: &BenchmarkSpec, trainer: &dyn Trainer, kind: EstimatorKind, weeks: usize, series: &TimeSeries) -> CellOutput {
    let interval = Duration::from_millis(spec.telemetry_interval_ms);
    let cfg = spec.estimator(kind);
    let attempt = || -> prbcast_core::Result<CellOutput> {
        let (train_part, test_part) = split_train_test(series, TRAIN_FRACTION)?;
        let mut mse = None;
        let mut predictor = None;
        let mut traces = Vec::new();
        let (mut train_s, mut predict_ms) = (Vec::new(), Vec::new());
        let mut peak: Option<u64> = None;
        for rep in 0..spec.repetitions {
            let rec = Recorder::start("train", interval);
            let trained = trainer.train(&train_part, &cfg);
            let train_trace = rec.finish();
            let trained = trained?;

            let rec = Recorder::start("predict", interval);
            let eval = evaluate(trained.forecaster.as_ref(), &train_part, &test_part, spec.seed);
            let predict_trace = rec.finish();
            let eval = eval?;

            train_s.push(trained.train_seconds);
            predict_ms.push(eval.mean_block_millis());
            peak = peak.max(train_trace.peak_rss()).max(predict_trace.peak_rss());
            if rep == 0 {
                mse = Some(eval.mse);
                predictor = trained.predictor;
                traces = vec![train_trace, predict_trace];
            }
        }
        let (tm, tsd) = mean_sd(&train_s);
        let (pm, psd) = mean_sd(&predict_ms);
        Ok(CellOutput {
            row: BenchmarkRow {
                model: kind,
                weeks,
                mse,
                train_seconds_mean: Some(tm),
                train_seconds_sd: Some(tsd),
                predict_ms_mean: Some(pm),
                predict_ms_sd: Some(psd),
                peak_memory_bytes: peak,
                repetitions: spec.repetitions,
                error: None,
            },
            predictor,
            traces,
        })
    };
    attempt().unwrap_or_else(|e| CellOutput {
        row: BenchmarkRow::failed(kind, weeks, e.to_string()),
        predictor: None,
        traces: Vec::new(),
    })
}

/// Runs every cell, writes `results.csv`, `summary.json`, the predictors
/// and the telemetry traces to `spec.out_dir`. Cell failures become error
/// rows; only I/O and spec problems abort the run.
pub fn run(spec: &BenchmarkSpec, trainer: &dyn Trainer) -> Result<BenchmarkOutcome> {
    spec.validate()?;
    fs::create_dir_all(&spec.out_dir)?;
    let mut weeks = spec.weeks.clone();
    weeks.sort_unstable();
    weeks.dedup();
    let longest = *weeks.last().expect("validated non-empty");

    let mut cells: Vec<(EstimatorKind, usize, CellOutput)> = Vec::new();
    for &w in &weeks {
        let series = benchmark_series(spec, w)?;
        if spec.parallel {
            let outputs: Vec<CellOutput> = thread::scope(|s| {
                let handles: Vec<_> = spec
                    .models
                    .iter()
                    .map(|&kind| {
                        let series = &series;
                        s.spawn(move || run_cell(spec, trainer, kind, w, series))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("benchmark cell panicked")).collect()
            });
            cells.extend(spec.models.iter().zip(outputs).map(|(k, o)| (*k, w, o)));
        } else {
            for &kind in &spec.models {
                cells.push((kind, w, run_cell(spec, trainer, kind, w, &series)));
            }
        }
    }

    let model_dir = spec.out_dir.join("predictors");
    let mut predictors = BTreeMap::new();
    let mut fingerprints = BTreeMap::new();
    let mut telemetry = Vec::new();
    let mut rows = Vec::new();
    for (kind, w, out) in cells {
        if let Some(p) = &out.predictor {
            let stem = model_dir.join(format!("{}_{w}w", kind.name()));
            p.save(&stem)?;
            fingerprints.insert(format!("{}_{w}w", kind.name()), p.fingerprint());
            predictors.insert(format!("{}_{w}w", kind.name()), stem);
        }
        if w == longest {
            for trace in out.traces {
                trace.save(&spec.out_dir.join(format!("telemetry_{}_{}.csv", kind.name(), trace.phase)))?;
                telemetry.push((kind, trace));
            }
        }
        rows.push(out.row);
    }
    sort_rows(&mut rows);

    let results_csv = spec.out_dir.join("results.csv");
    crate::report::write_rows(&results_csv, &rows)?;
    let summary_json = spec.out_dir.join("summary.json");
    let summary = serde_json::json!({
        "spec": spec,
        "timing_comparable": !spec.parallel,
        "rows": rows,
        "predictor_fingerprints": fingerprints,
    });
    fs::write(&summary_json, serde_json::to_string_pretty(&summary)?)?;

    Ok(BenchmarkOutcome {
        rows,
        results_csv,
        summary_json,
        predictors,
        telemetry,
    })
}

/// Model order of [`EstimatorKind::ALL`], then data length.
pub fn sort_rows(rows: &mut [BenchmarkRow]) {
    let rank = |k: EstimatorKind| EstimatorKind::ALL.iter().position(|x| *x == k).unwrap_or(usize::MAX);
    rows.sort_by_key(|r| (rank(r.model), r.weeks));
}

pub fn predictor_path(dir: &Path, kind: EstimatorKind, weeks: usize) -> PathBuf {
    dir.join("predictors").join(format!("{}_{weeks}w.prbm", kind.name()))
}
