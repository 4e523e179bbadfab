use prbcast_core::models::{evaluate, make_windows, train, EstimatorConfig, EstimatorKind, Predictor};
use prbcast_core::traffic::{default_start, generate, TenantProfile};
use prbcast_core::ts::{mean_point, to_quantiles, TimeSeries};

fn small(kind: EstimatorKind) -> EstimatorConfig {
    let mut cfg = EstimatorConfig::new(kind).with_seed(3);
    cfg.num_eval_samples = 50;
    cfg
}

fn benchmark_series(weeks: usize, seed: u64) -> TimeSeries {
    generate("t", &TenantProfile::benchmark(), default_start(), weeks * 168, seed).unwrap()
}

#[test]
fn constant_series_is_learned() {
    let c = 7.0;
    let series = generate("t", &TenantProfile::constant(c), default_start(), 14 * 24, 0).unwrap();
    for kind in EstimatorKind::ALL {
        let p = train(&series, &small(kind)).unwrap();
        let fc = p.predict(&series, 1).unwrap();
        let mean = mean_point(&fc);
        for v in &mean.values {
            assert!((v - c).abs() <= 0.1 * c.max(1.0), "{kind}: {v}");
        }
    }
}

#[test]
fn training_loss_trends_down() {
    let series = benchmark_series(2, 0);
    for kind in EstimatorKind::ALL {
        let p = train(&series, &small(kind)).unwrap();
        let losses = &p.metadata().epoch_losses;
        assert_eq!(losses.len(), 5);
        assert!(losses.iter().all(|l| l.is_finite()));
        assert!(losses[4] <= losses[0], "{kind}: {losses:?}");
        assert_eq!(p.metadata().windows, 336 - 48 + 1);
    }
}

#[test]
fn training_and_prediction_are_deterministic() {
    let series = benchmark_series(2, 1);
    for kind in EstimatorKind::ALL {
        let a = train(&series, &small(kind)).unwrap();
        let b = train(&series, &small(kind)).unwrap();
        assert_eq!(a.params().to_bytes(), b.params().to_bytes(), "{kind}");
        assert_eq!(a.fingerprint(), b.fingerprint());
        let fa = a.predict(&series, 9).unwrap();
        let fb = b.predict(&series, 9).unwrap();
        assert_eq!(fa, fb);
    }
}

#[test]
fn forecast_shapes_and_positivity() {
    let series = benchmark_series(2, 2);
    for kind in EstimatorKind::ALL {
        let p = train(&series, &small(kind)).unwrap();
        let fc = p.predict(&series, 0).unwrap();
        let expected = if kind == EstimatorKind::Lstm { 1 } else { 50 };
        assert_eq!(fc.num_samples(), expected, "{kind}");
        assert_eq!(fc.horizon(), 24);
        assert_eq!(fc.start(), series.end());
        assert!(fc.samples().iter().flatten().all(|v| *v >= 0.0));
    }
}

#[test]
fn short_context_is_rejected() {
    let series = benchmark_series(2, 2);
    let p = train(&series, &small(EstimatorKind::Sff)).unwrap();
    assert!(p.predict(&series.slice(0..23).unwrap(), 0).is_err());
    assert!(train(&series.slice(0..47).unwrap(), &small(EstimatorKind::Sff)).is_err());
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let series = benchmark_series(2, 4);
    for kind in EstimatorKind::ALL {
        let p = train(&series, &small(kind)).unwrap();
        let stem = dir.path().join(kind.name());
        p.save(&stem).unwrap();
        let q = Predictor::load(&stem).unwrap();
        assert_eq!(q.params().to_bytes(), p.params().to_bytes());
        assert_eq!(q.config(), p.config());
        assert_eq!(q.metadata(), p.metadata());
        assert_eq!(q.predict(&series, 5).unwrap(), p.predict(&series, 5).unwrap());
    }
}

#[test]
fn load_rejects_mismatched_architecture() {
    let dir = tempfile::tempdir().unwrap();
    let series = benchmark_series(2, 4);
    let p = train(&series, &small(EstimatorKind::Sff)).unwrap();
    let stem = dir.path().join("m");
    p.save(&stem).unwrap();
    let json = std::fs::read_to_string(stem.with_extension("json")).unwrap();
    let edited = json.replacen("\"kind\": \"sff\"", "\"kind\": \"lstm\"", 1);
    assert_ne!(json, edited);
    std::fs::write(stem.with_extension("json"), edited).unwrap();
    assert!(Predictor::load(&stem).is_err());
}

#[test]
fn deepar_band_tracks_predictability() {
    // same variance: a clean sinusoid versus white noise around the mean
    let amplitude = 10.0;
    let sinusoid = TenantProfile {
        daily_amplitude: amplitude,
        ..TenantProfile::constant(50.0)
    };
    let noise = TenantProfile {
        noise_sigma: amplitude / 2f64.sqrt(),
        ..TenantProfile::constant(50.0)
    };
    let band = |profile: &TenantProfile| {
        let series = generate("t", profile, default_start(), 4 * 168, 5).unwrap();
        let p = train(&series, &small(EstimatorKind::DeepAr)).unwrap();
        let q = to_quantiles(&p.predict(&series, 0).unwrap()).unwrap();
        let (lo, hi) = (q.level(10).unwrap(), q.level(90).unwrap());
        lo.iter().zip(hi).map(|(a, b)| b - a).sum::<f64>() / lo.len() as f64
    };
    let (clean, noisy) = (band(&sinusoid), band(&noise));
    assert!(clean < noisy, "clean band {clean} vs noise band {noisy}");
}

#[test]
fn evaluate_counts_whole_blocks() {
    let series = benchmark_series(2, 6);
    let p = train(&series.slice(0..300).unwrap(), &small(EstimatorKind::Sff)).unwrap();
    let history = series.slice(0..300).unwrap();
    let test = series.slice(300..336).unwrap();
    let e = evaluate(&p, &history, &test, 0).unwrap();
    assert_eq!(e.block_times.len(), 1);
    assert_eq!(e.actual.len(), 24);
    assert!(e.mse.is_finite());
    assert!(evaluate(&p, &history, &series.slice(300..320).unwrap(), 0).is_err());
}

#[test]
fn window_count_matches_series_length() {
    let cfg = EstimatorConfig::new(EstimatorKind::Sff);
    for weeks in [2, 4] {
        let s = benchmark_series(weeks, 0);
        assert_eq!(make_windows(&s, &cfg).unwrap().len(), weeks * 168 - 47);
    }
}
