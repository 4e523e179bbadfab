//! Twenty weeks of a near-noiseless daily sinusoid: every probabilistic model
//! must beat the naive forecast that repeats the previous day.

use prbcast_core::models::{evaluate, train, EstimatorConfig, EstimatorKind};
use prbcast_core::traffic::{default_start, generate, TenantProfile};
use prbcast_core::ts::{mse_values, split_train_test};

#[test]
fn probabilistic_models_beat_repeat_last_day() {
    let amplitude = 20.0;
    let profile = TenantProfile {
        daily_amplitude: amplitude,
        noise_sigma: 0.05 * amplitude,
        ..TenantProfile::constant(50.0)
    };
    let series = generate("t", &profile, default_start(), 20 * 168, 0).unwrap();
    let (train_part, test) = split_train_test(&series, 0.8).unwrap();

    let n0 = train_part.len();
    let blocks = test.len() / 24;
    let v = series.values();
    let actual = &v[n0..n0 + blocks * 24];
    let naive: Vec<f64> = (n0..n0 + blocks * 24).map(|t| v[t - 24]).collect();
    let naive_mse = mse_values(actual, &naive).unwrap();

    for kind in EstimatorKind::ALL.into_iter().filter(|k| k.is_probabilistic()) {
        let p = train(&train_part, &EstimatorConfig::new(kind).with_seed(0)).unwrap();
        let e = evaluate(&p, &train_part, &test, 0).unwrap();
        assert_eq!(e.actual, actual);
        println!("{kind}: mse {:.4} naive {naive_mse:.4}", e.mse);
        assert!(e.mse < naive_mse, "{kind}: {} >= {naive_mse}", e.mse);
    }
}
