use prbcast_bench::harness::{benchmark_series, predictor_path};
use prbcast_bench::report::read_rows;
use prbcast_bench::{run, BenchmarkSpec, ModelTrainer, Trained, Trainer};
use prbcast_core::models::{EstimatorConfig, EstimatorKind, Forecaster, Predictor};
use prbcast_core::ts::{SampleForecast, TimeSeries};
use prbcast_core::Error;

/// Knows the full series and returns the true continuation.
struct Oracle {
    full: Vec<TimeSeries>,
}

struct OracleForecaster {
    full: Vec<TimeSeries>,
}

impl Forecaster for OracleForecaster {
    fn context_length(&self) -> usize {
        24
    }

    fn horizon(&self) -> usize {
        24
    }

    fn forecast(&self, context: &TimeSeries, _seed: u64) -> prbcast_core::Result<SampleForecast> {
        let (full, n) = self
            .full
            .iter()
            .find_map(|s| s.index_of(context.end()).filter(|&n| n + 24 <= s.len()).map(|n| (s, n)))
            .ok_or_else(|| Error::InvalidArgument("unknown context".into()))?;
        SampleForecast::new(context.end(), vec![full.values()[n..n + 24].to_vec()])
    }
}

impl Trainer for Oracle {
    fn train(&self, _series: &TimeSeries, _cfg: &EstimatorConfig) -> prbcast_core::Result<Trained> {
        Ok(Trained {
            forecaster: Box::new(OracleForecaster { full: self.full.clone() }),
            train_seconds: 0.0,
            predictor: None,
        })
    }
}

struct Broken;

impl Trainer for Broken {
    fn train(&self, _series: &TimeSeries, cfg: &EstimatorConfig) -> prbcast_core::Result<Trained> {
        Err(Error::InvalidArgument(format!("{} refuses to train", cfg.kind)))
    }
}

#[test]
fn smoke_single_cell() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = BenchmarkSpec::new(dir.path());
    spec.models = vec![EstimatorKind::Sff];
    spec.weeks = vec![2];
    spec.repetitions = 1;
    let out = run(&spec, &ModelTrainer).unwrap();
    assert_eq!(out.rows.len(), 1);
    let row = &out.rows[0];
    assert!(row.error.is_none());
    assert!(row.mse.unwrap().is_finite() && row.mse.unwrap() > 0.0);
    assert!(row.train_seconds_mean.unwrap() > 0.0);
    assert!(row.predict_ms_mean.unwrap() > 0.0);
    assert_eq!(row.train_seconds_sd, Some(0.0));
    assert!(row.peak_memory_bytes.unwrap() > 0);
    assert_eq!(read_rows(&out.results_csv).unwrap(), out.rows);

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out.summary_json).unwrap()).unwrap();
    assert_eq!(summary["timing_comparable"], true);
    assert!(summary["predictor_fingerprints"]["sff_2w"].is_string());

    let loaded = Predictor::load(&predictor_path(dir.path(), EstimatorKind::Sff, 2).with_extension("")).unwrap();
    assert_eq!(loaded.kind(), EstimatorKind::Sff);
    for phase in ["train", "predict"] {
        let text = std::fs::read_to_string(dir.path().join(format!("telemetry_sff_{phase}.csv"))).unwrap();
        assert!(text.starts_with("# rss="));
        assert!(text.lines().nth(1).unwrap() == "phase,elapsed_s,rss_bytes");
    }
}

#[test]
fn oracle_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = BenchmarkSpec::new(dir.path());
    spec.models = vec![EstimatorKind::Lstm, EstimatorKind::DeepAr];
    spec.weeks = vec![2, 4];
    spec.repetitions = 2;
    let full = spec.weeks.iter().map(|&w| benchmark_series(&spec, w).unwrap()).collect();
    let out = run(&spec, &Oracle { full }).unwrap();
    assert_eq!(out.rows.len(), 4);
    for r in &out.rows {
        assert_eq!(r.error, None);
        assert_eq!(r.mse, Some(0.0));
        assert_eq!(r.repetitions, 2);
    }
    assert!(out.predictors.is_empty());
}

#[test]
fn failures_become_error_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = BenchmarkSpec::new(dir.path());
    spec.models = vec![EstimatorKind::Sff, EstimatorKind::Transformer];
    spec.weeks = vec![2];
    spec.repetitions = 1;
    spec.parallel = true;
    let out = run(&spec, &Broken).unwrap();
    assert_eq!(out.rows.len(), 2);
    for r in &out.rows {
        assert!(r.error.as_deref().unwrap().contains("refuses to train"));
        assert_eq!(r.mse, None);
    }
    let (_, failed) = prbcast_bench::report::report(dir.path()).unwrap();
    assert!(failed);
}

#[test]
fn spec_is_validated() {
    let mut spec = BenchmarkSpec::new("unused");
    spec.weeks = vec![3];
    assert!(spec.validate().is_err());
    spec.weeks = vec![2];
    spec.repetitions = 0;
    assert!(spec.validate().is_err());
    spec.repetitions = 1;
    spec.models.clear();
    assert!(spec.validate().is_err());
}
