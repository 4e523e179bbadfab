//! Seeded synthetic PRB-demand traces.
//!
//! All randomness comes from `ChaCha8Rng`, a counter-based generator whose
//! output stream is fixed by its seed on every platform, so a given
//! `(profile, hours, seed)` always yields the same trace bit for bit.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ts::{self, TimeSeries};

pub const HOURS_PER_DAY: usize = 24;
pub const HOURS_PER_WEEK: usize = 168;

/// Data lengths of the benchmark grid, in weeks.
pub const BENCHMARK_WEEKS: [usize; 4] = [2, 4, 10, 20];

/// Demand model of a single tenant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TenantProfile {
    pub base_load: f64,
    pub daily_amplitude: f64,
    pub weekly_amplitude: f64,
    pub daily_phase: f64,
    pub weekly_phase: f64,
    pub noise_sigma: f64,
    /// Lag-1 coefficient of the noise process; 0 gives white noise.
    pub ar_coefficient: f64,
    pub burst_probability: f64,
    pub burst_scale: f64,
    pub trend_per_week: f64,
}

impl Default for TenantProfile {
    fn default() -> Self {
        Self::benchmark()
    }
}

impl TenantProfile {
    /// Profile used by the benchmark grid.
    pub fn benchmark() -> Self {
        Self {
            base_load: 50.0,
            daily_amplitude: 20.0,
            weekly_amplitude: 5.0,
            daily_phase: 0.0,
            weekly_phase: 0.0,
            noise_sigma: 2.0,
            ar_coefficient: 0.0,
            burst_probability: 0.01,
            burst_scale: 10.0,
            trend_per_week: 0.0,
        }
    }

    /// Seasonal profile whose residual is a strongly autocorrelated AR(1)
    /// process, so recent history carries information beyond the season.
    pub fn seasonal_ar() -> Self {
        Self {
            noise_sigma: 2.0,
            ar_coefficient: 0.95,
            burst_probability: 0.0,
            burst_scale: 0.0,
            ..Self::benchmark()
        }
    }

    pub fn constant(level: f64) -> Self {
        Self {
            base_load: level,
            daily_amplitude: 0.0,
            weekly_amplitude: 0.0,
            daily_phase: 0.0,
            weekly_phase: 0.0,
            noise_sigma: 0.0,
            ar_coefficient: 0.0,
            burst_probability: 0.0,
            burst_scale: 0.0,
            trend_per_week: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("base_load", self.base_load),
            ("daily_amplitude", self.daily_amplitude),
            ("weekly_amplitude", self.weekly_amplitude),
            ("noise_sigma", self.noise_sigma),
            ("burst_scale", self.burst_scale),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        for (name, v) in [
            ("daily_phase", self.daily_phase),
            ("weekly_phase", self.weekly_phase),
            ("trend_per_week", self.trend_per_week),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be finite")));
            }
        }
        if !(0.0..=1.0).contains(&self.burst_probability) {
            return Err(Error::InvalidArgument(format!(
                "burst_probability {} outside [0, 1]",
                self.burst_probability
            )));
        }
        if !(self.ar_coefficient.abs() < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "ar_coefficient {} must satisfy |phi| < 1",
                self.ar_coefficient
            )));
        }
        Ok(())
    }

    /// Deterministic part of the demand at hour `t`.
    pub fn seasonal_level(&self, t: usize) -> f64 {
        let t = t as f64;
        self.base_load
            + self.daily_amplitude * (2.0 * PI * t / HOURS_PER_DAY as f64 + self.daily_phase).sin()
            + self.weekly_amplitude
                * (2.0 * PI * t / HOURS_PER_WEEK as f64 + self.weekly_phase).sin()
            + self.trend_per_week * t / HOURS_PER_WEEK as f64
    }
}

pub fn default_start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
}

/// Generates `hours` points of demand for one tenant.
pub fn generate(
    tenant_id: &str,
    profile: &TenantProfile,
    start: DateTime<Utc>,
    hours: usize,
    seed: u64,
) -> Result<TimeSeries> {
    if hours < 1 {
        return Err(Error::InvalidArgument("hours must be >= 1".into()));
    }
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut residual = 0.0;
    let values = (0..hours)
        .map(|t| {
            let eps: f64 = rng.sample(StandardNormal);
            residual = profile.ar_coefficient * residual + profile.noise_sigma * eps;
            let burst = if rng.random::<f64>() < profile.burst_probability {
                profile.burst_scale * rng.sample::<f64, _>(Exp1)
            } else {
                0.0
            };
            (profile.seasonal_level(t) + residual + burst).max(0.0)
        })
        .collect();
    TimeSeries::new(tenant_id, start, values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TenantSpec {
    pub id: String,
    #[serde(default)]
    pub profile: TenantProfile,
}

/// Multi-tenant scenario, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub tenants: Vec<TenantSpec>,
    pub weeks: usize,
    pub seed: u64,
    #[serde(default = "default_start")]
    pub start: DateTime<Utc>,
}

impl ScenarioConfig {
    pub fn single(id: &str, profile: TenantProfile, weeks: usize, seed: u64) -> Self {
        Self {
            tenants: vec![TenantSpec {
                id: id.to_string(),
                profile,
            }],
            weeks,
            seed,
            start: default_start(),
        }
    }

    pub fn hours(&self) -> usize {
        self.weeks * HOURS_PER_WEEK
    }

    pub fn validate(&self) -> Result<()> {
        if self.tenants.is_empty() {
            return Err(Error::InvalidArgument("scenario has no tenants".into()));
        }
        if self.weeks == 0 {
            return Err(Error::InvalidArgument("weeks must be positive".into()));
        }
        for (i, t) in self.tenants.iter().enumerate() {
            if self.tenants[..i].iter().any(|o| o.id == t.id) {
                return Err(Error::InvalidArgument(format!("duplicate tenant id {}", t.id)));
            }
            t.profile.validate()?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// SplitMix64 finalizer, used to spread tenant indices over the seed space.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn tenant_seed(scenario_seed: u64, tenant_index: usize) -> u64 {
    scenario_seed ^ mix(tenant_index as u64)
}

pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<Vec<TimeSeries>> {
    cfg.validate()?;
    cfg.tenants
        .iter()
        .enumerate()
        .map(|(i, t)| {
            generate(
                &t.id,
                &t.profile,
                cfg.start,
                cfg.hours(),
                tenant_seed(cfg.seed, i),
            )
        })
        .collect()
}

/// Generates the scenario and writes it to `<dir>/demand.csv`.
pub fn write_scenario(cfg: &ScenarioConfig, dir: &Path) -> Result<(Vec<TimeSeries>, PathBuf)> {
    let series = generate_scenario(cfg)?;
    fs::create_dir_all(dir)?;
    let path = dir.join("demand.csv");
    let file = fs::File::create(&path)?;
    ts::write_csv(std::io::BufWriter::new(file), &series)?;
    Ok((series, path))
}

/// Sample autocorrelation at `lag`.
pub fn autocorrelation(values: &[f64], lag: usize) -> f64 {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let denom: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let num: f64 = (0..n - lag)
        .map(|i| (values[i] - mean) * (values[i + lag] - mean))
        .sum();
    num / denom
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_profile_is_constant() {
        let s = generate("a", &TenantProfile::constant(12.5), default_start(), 100, 7).unwrap();
        assert!(s.values().iter().all(|v| *v == 12.5));
    }

    #[test]
    fn deterministic_per_seed() {
        let p = TenantProfile::benchmark();
        let a = generate("a", &p, default_start(), 500, 3).unwrap();
        let b = generate("a", &p, default_start(), 500, 3).unwrap();
        let c = generate("a", &p, default_start(), 500, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn closed_form_sinusoid() {
        let p = TenantProfile {
            daily_amplitude: 1.0,
            ..TenantProfile::constant(10.0)
        };
        let s = generate("a", &p, default_start(), 72, 1).unwrap();
        for (t, v) in s.values().iter().enumerate() {
            let expected = 10.0 + (2.0 * PI * t as f64 / 24.0).sin();
            assert!((v - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn never_negative() {
        let p = TenantProfile {
            noise_sigma: 30.0,
            ..TenantProfile::benchmark()
        };
        let s = generate("a", &p, default_start(), 2000, 11).unwrap();
        assert!(s.values().iter().all(|v| *v >= 0.0));
        assert!(s.values().iter().any(|v| *v == 0.0));
    }

    #[test]
    fn daily_autocorrelation() {
        let p = TenantProfile {
            daily_amplitude: 20.0,
            ..TenantProfile::constant(50.0)
        };
        let n = 24 * 28;
        let s = generate("a", &p, default_start(), n, 0).unwrap();
        let expected = (n - 24) as f64 / n as f64;
        assert!((autocorrelation(s.values(), 24) - expected).abs() < 1e-9);
        assert!(autocorrelation(s.values(), 12) < -0.9);
    }

    #[test]
    fn rejects_bad_profiles() {
        let bad = TenantProfile {
            burst_probability: 1.5,
            ..TenantProfile::benchmark()
        };
        assert!(generate("a", &bad, default_start(), 10, 0).is_err());
        assert!(generate("a", &TenantProfile::benchmark(), default_start(), 0, 0).is_err());
        let bad = TenantProfile {
            ar_coefficient: 1.0,
            ..TenantProfile::benchmark()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn scenario_seeds_are_separated() {
        let cfg = ScenarioConfig {
            tenants: ["a", "b", "c"]
                .iter()
                .map(|id| TenantSpec {
                    id: id.to_string(),
                    profile: TenantProfile::benchmark(),
                })
                .collect(),
            weeks: 2,
            seed: 99,
            start: default_start(),
        };
        let series = generate_scenario(&cfg).unwrap();
        assert_eq!(series.len(), 3);
        assert!(series.iter().all(|s| s.len() == 336));
        assert_ne!(series[0].values(), series[1].values());
        assert_ne!(series[1].values(), series[2].values());
        assert_ne!(series[0].values(), series[2].values());
    }

    #[test]
    fn scenario_json_defaults() {
        let cfg = ScenarioConfig::from_json(
            r#"{"tenants":[{"id":"t1","profile":{"noise_sigma":0.5}}],"weeks":2,"seed":1}"#,
        )
        .unwrap();
        assert_eq!(cfg.start, default_start());
        assert_eq!(cfg.tenants[0].profile.noise_sigma, 0.5);
        assert_eq!(cfg.tenants[0].profile.base_load, 50.0);
        assert!(ScenarioConfig::from_json(r#"{"tenants":[],"weeks":2,"seed":1}"#).is_err());
    }
}
