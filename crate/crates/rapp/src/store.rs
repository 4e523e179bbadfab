//! Per-tenant demand history fed by O-DU reports.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use prbcast_core::ts::{format_timestamp, step, TimeSeries};
use prbcast_o1::{MsgType, O1Message, Payload};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IngestError {
    #[error("tenant {tenant}: duplicate report for {}", format_timestamp(*.timestamp))]
    Duplicate { tenant: String, timestamp: DateTime<Utc> },
    #[error("tenant {tenant}: report for {} is older than the latest {}", format_timestamp(*.timestamp), format_timestamp(*.latest))]
    Stale {
        tenant: String,
        timestamp: DateTime<Utc>,
        latest: DateTime<Utc>,
    },
    #[error("tenant {tenant}: expected the report for {}, got {}", format_timestamp(*.expected), format_timestamp(*.got))]
    Gap {
        tenant: String,
        expected: DateTime<Utc>,
        got: DateTime<Utc>,
    },
    #[error("{0} is not a history report")]
    NotAReport(MsgType),
    #[error("invalid demand value: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ingested {
    /// First report of a previously unknown tenant.
    Registered,
    Appended,
}

#[derive(Debug)]
struct Buffer {
    series: TimeSeries,
    /// Points accepted since registration, including any dropped by retention.
    total: usize,
}

/// Append-only hourly buffers, one per tenant. Rejected reports leave the
/// store unchanged.
#[derive(Debug, Default)]
pub struct MonitoringStore {
    tenants: BTreeMap<String, Buffer>,
    retention_hours: Option<usize>,
}

impl MonitoringStore {
    pub fn new(retention_hours: Option<usize>) -> Self {
        Self {
            tenants: BTreeMap::new(),
            retention_hours: retention_hours.map(|h| h.max(1)),
        }
    }

    pub fn ingest(&mut self, tenant: &str, timestamp: DateTime<Utc>, value: f64) -> Result<Ingested, IngestError> {
        let Some(buf) = self.tenants.get_mut(tenant) else {
            let series =
                TimeSeries::new(tenant, timestamp, vec![value]).map_err(|e| IngestError::Invalid(e.to_string()))?;
            self.tenants.insert(tenant.to_string(), Buffer { series, total: 1 });
            return Ok(Ingested::Registered);
        };
        let latest = buf.series.end() - step();
        let expected = buf.series.end();
        if timestamp == latest || buf.series.index_of(timestamp).is_some() {
            return Err(IngestError::Duplicate {
                tenant: tenant.to_string(),
                timestamp,
            });
        }
        if timestamp < latest {
            return Err(IngestError::Stale {
                tenant: tenant.to_string(),
                timestamp,
                latest,
            });
        }
        if timestamp != expected {
            return Err(IngestError::Gap {
                tenant: tenant.to_string(),
                expected,
                got: timestamp,
            });
        }
        buf.series.push(value).map_err(|e| IngestError::Invalid(e.to_string()))?;
        buf.total += 1;
        if let Some(keep) = self.retention_hours {
            buf.series.retain_last(keep);
        }
        Ok(Ingested::Appended)
    }

    pub fn ingest_message(&mut self, msg: &O1Message) -> Result<Ingested, IngestError> {
        match msg.payload {
            Payload::History { prb_demand } => self.ingest(&msg.tenant_id, msg.timestamp, prb_demand),
            _ => Err(IngestError::NotAReport(msg.msg_type())),
        }
    }

    /// Copy of the retained history of `tenant`.
    pub fn snapshot(&self, tenant: &str) -> Option<TimeSeries> {
        self.tenants.get(tenant).map(|b| b.series.clone())
    }

    pub fn len(&self, tenant: &str) -> usize {
        self.tenants.get(tenant).map_or(0, |b| b.series.len())
    }

    /// Points accepted for `tenant` over its lifetime.
    pub fn total_ingested(&self, tenant: &str) -> usize {
        self.tenants.get(tenant).map_or(0, |b| b.total)
    }

    pub fn tenants(&self) -> impl Iterator<Item = &str> {
        self.tenants.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.tenants.is_empty()
    }
}
