//! Decision engine: turns a quantile forecast into per-hour PRB allocations.

use chrono::{DateTime, Utc};
use prbcast_core::models::EstimatorKind;
use prbcast_core::ts::{format_timestamp, QuantileForecast};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{RappError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rounding {
    #[default]
    Ceil,
    Round,
    Floor,
}

impl Rounding {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Rounding::Ceil => v.ceil(),
            Rounding::Round => v.round(),
            Rounding::Floor => v.floor(),
        }
    }
}

/// Relative cost of one PRB of unmet demand versus one idle PRB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostRatio {
    pub under: f64,
    pub over: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub quantile_level: u8,
    pub rounding: Rounding,
    pub min_prbs: u32,
    /// Default is the largest NR carrier, 273 PRBs.
    pub max_prbs: u32,
    /// When set, overrides `quantile_level` with the newsvendor level
    /// `100 * under / (under + over)`.
    pub cost: Option<CostRatio>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            quantile_level: 90,
            rounding: Rounding::Ceil,
            min_prbs: 0,
            max_prbs: 273,
            cost: None,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=99).contains(&self.quantile_level) {
            return Err(RappError::Config(format!(
                "quantile_level {} outside 1..=99",
                self.quantile_level
            )));
        }
        if self.min_prbs > self.max_prbs {
            return Err(RappError::Config(format!(
                "min_prbs {} exceeds max_prbs {}",
                self.min_prbs, self.max_prbs
            )));
        }
        if let Some(c) = self.cost {
            if !(c.under.is_finite() && c.over.is_finite() && c.under > 0.0 && c.over > 0.0) {
                return Err(RappError::Config("cost weights must be positive".into()));
            }
        }
        Ok(())
    }

    /// Percentile actually allocated.
    pub fn effective_level(&self) -> u8 {
        match self.cost {
            Some(c) => (100.0 * c.under / (c.under + c.over)).round().clamp(1.0, 99.0) as u8,
            None => self.quantile_level,
        }
    }

    fn allocate(&self, demand: f64) -> u32 {
        let v = self.rounding.apply(demand);
        v.clamp(self.min_prbs as f64, self.max_prbs as f64) as u32
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub model: EstimatorKind,
    pub quantile_level: u8,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    /// Content hash of everything below; doubles as the O1 `msg_id`.
    pub decision_id: u64,
    pub tenant_id: String,
    pub forecast_start: DateTime<Utc>,
    pub prbs: Vec<u32>,
    pub provenance: Provenance,
}

fn decision_id(tenant: &str, start: DateTime<Utc>, prbs: &[u32], p: &Provenance) -> u64 {
    let mut h = Sha256::new();
    for part in [tenant, &format_timestamp(start), p.model.name(), &p.fingerprint] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    h.update([p.quantile_level]);
    for v in prbs {
        h.update(v.to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_be_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Per hour: the percentile row at the policy level, rounded, then clamped to
/// the PRB caps.
pub fn decide(
    tenant: &str,
    q: &QuantileForecast,
    policy: &PolicyConfig,
    model: EstimatorKind,
    fingerprint: &str,
) -> Result<Decision> {
    policy.validate()?;
    let level = policy.effective_level();
    let prbs: Vec<u32> = q.level(level)?.iter().map(|v| policy.allocate(*v)).collect();
    let provenance = Provenance {
        model,
        quantile_level: level,
        fingerprint: fingerprint.to_string(),
    };
    Ok(Decision {
        decision_id: decision_id(tenant, q.start(), &prbs, &provenance),
        tenant_id: tenant.to_string(),
        forecast_start: q.start(),
        prbs,
        provenance,
    })
}
