//! The rApp control loop.
//!
//! Four workers connected by ordered channels: the monitor ingests reports
//! and, every `cadence_hours` accepted hours of a tenant, hands a snapshot to
//! the analytics worker; decisions and actuations follow in order.

use std::path::{Path, PathBuf};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use prbcast_core::models::{EstimatorConfig, EstimatorKind};
use prbcast_core::ts::{format_timestamp, QuantileForecast, TimeSeries};
use prbcast_o1::codec::ALLOCATION_HOURS;
use prbcast_o1::{ClientConfig, ClientSession, O1Message};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::actuator::{actuate, AllocationSink, RetryPolicy};
use crate::analytics::{min_history, run_analytics, AnalyticsOutput};
use crate::events::EventLog;
use crate::policy::{decide, Decision, PolicyConfig};
use crate::store::MonitoringStore;
use crate::{RappError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RappConfig {
    /// O-DU address, `host:port`.
    pub endpoint: String,
    pub model: EstimatorConfig,
    pub policy: PolicyConfig,
    /// Retrain and decide every this many accepted hours per tenant.
    pub cadence_hours: usize,
    pub retention_hours: Option<usize>,
    /// Seeds training; forecasts use it mixed with the history length.
    pub seed: u64,
    pub event_log: Option<PathBuf>,
    /// Stop once every tenant has this many hours; run until the link is
    /// lost otherwise.
    pub stop_after_hours: Option<usize>,
    pub ack_timeout_ms: u64,
    pub retry: RetryPolicy,
}

impl Default for RappConfig {
    fn default() -> Self {
        Self {
            endpoint: "127.0.0.1:7700".into(),
            model: EstimatorConfig::new(EstimatorKind::DeepAr),
            policy: PolicyConfig::default(),
            cadence_hours: 24,
            retention_hours: None,
            seed: 0,
            event_log: None,
            stop_after_hours: None,
            ack_timeout_ms: 2000,
            retry: RetryPolicy::default(),
        }
    }
}

impl RappConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.policy.validate()?;
        if self.model.horizon != ALLOCATION_HOURS {
            return Err(RappError::Config(format!(
                "horizon must be {ALLOCATION_HOURS} to match the allocation message"
            )));
        }
        if self.cadence_hours == 0 {
            return Err(RappError::Config("cadence_hours must be positive".into()));
        }
        if let Some(keep) = self.retention_hours {
            let needed = min_history(&self.model);
            if keep < needed {
                return Err(RappError::Config(format!(
                    "retention_hours {keep} is below the {needed} hours analytics needs"
                )));
            }
        }
        Ok(())
    }

    fn training_config(&self) -> EstimatorConfig {
        EstimatorConfig {
            seed: self.seed,
            ..self.model.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct DecisionRecord {
    pub decision: Decision,
    pub quantiles: QuantileForecast,
    /// Accepted hours of the tenant when the decision was triggered.
    pub history_hours: usize,
    pub train_seconds: f64,
    pub predict_seconds: f64,
    pub holdout_mse: Option<f64>,
    /// `None` when actuation failed.
    pub attempts: Option<u32>,
}

#[derive(Debug, Default)]
pub struct RunReport {
    pub ingested: usize,
    pub rejected: usize,
    pub records: Vec<DecisionRecord>,
    pub errors: Vec<String>,
}

impl RunReport {
    pub fn decisions(&self) -> impl Iterator<Item = &Decision> {
        self.records.iter().map(|r| &r.decision)
    }
}

struct Job {
    history: TimeSeries,
    hours: usize,
}

struct Analysed {
    job: Job,
    out: AnalyticsOutput,
}

struct Decided {
    decision: Decision,
    analysed: Analysed,
}

/// Runs the loop over `reports` until the channel closes or the stop
/// condition holds, then drains the downstream workers.
pub fn run(cfg: &RappConfig, reports: &Receiver<O1Message>, sink: Arc<dyn AllocationSink>, events: Arc<EventLog>) -> Result<RunReport> {
    cfg.validate()?;
    let errors = Arc::new(Mutex::new(Vec::new()));
    let records = Arc::new(Mutex::new(Vec::new()));
    let (job_tx, job_rx) = mpsc::channel::<Job>();
    let (analysed_tx, analysed_rx) = mpsc::channel::<Analysed>();
    let (decided_tx, decided_rx) = mpsc::channel::<Decided>();

    let analytics = {
        let model = cfg.training_config();
        let seed = cfg.seed;
        let events = Arc::clone(&events);
        let errors = Arc::clone(&errors);
        thread::spawn(move || {
            for job in job_rx {
                let forecast_seed = seed ^ job.hours as u64;
                match run_analytics(&job.history, &model, forecast_seed) {
                    Ok(out) => {
                        events.log(
                            "analytics",
                            json!({
                                "tenant_id": job.history.tenant_id(),
                                "history_hours": job.hours,
                                "model": model.kind,
                                "fingerprint": out.predictor.fingerprint(),
                                "train_seconds": out.train_seconds,
                                "predict_seconds": out.predict_seconds,
                                "holdout_mse": out.holdout_mse,
                            }),
                        );
                        if analysed_tx.send(Analysed { job, out }).is_err() {
                            return;
                        }
                    }
                    Err(e) => {
                        events.log("analytics_error", json!({"tenant_id": job.history.tenant_id(), "error": e.to_string()}));
                        errors.lock().unwrap_or_else(|p| p.into_inner()).push(e.to_string());
                    }
                }
            }
        })
    };

    let decider = {
        let policy = cfg.policy.clone();
        let events = Arc::clone(&events);
        let errors = Arc::clone(&errors);
        thread::spawn(move || {
            for analysed in analysed_rx {
                let tenant = analysed.job.history.tenant_id().to_string();
                let p = &analysed.out.predictor;
                match decide(&tenant, &analysed.out.quantiles, &policy, p.kind(), &p.fingerprint()) {
                    Ok(decision) => {
                        events.log(
                            "decide",
                            json!({
                                "tenant_id": tenant,
                                "decision_id": decision.decision_id,
                                "forecast_start": format_timestamp(decision.forecast_start),
                                "quantile_level": decision.provenance.quantile_level,
                                "prbs": decision.prbs,
                            }),
                        );
                        if decided_tx.send(Decided { decision, analysed }).is_err() {
                            return;
                        }
                    }
                    Err(e) => errors.lock().unwrap_or_else(|p| p.into_inner()).push(e.to_string()),
                }
            }
        })
    };

    let actuator = {
        let retry = cfg.retry;
        let events = Arc::clone(&events);
        let errors = Arc::clone(&errors);
        let records = Arc::clone(&records);
        thread::spawn(move || {
            for Decided { decision, analysed } in decided_rx {
                let attempts = match actuate(&decision, sink.as_ref(), retry) {
                    Ok((_, attempts)) => {
                        events.log("actuate", json!({"decision_id": decision.decision_id, "attempts": attempts, "acked": true}));
                        Some(attempts)
                    }
                    Err(e) => {
                        events.log("actuate", json!({"decision_id": decision.decision_id, "acked": false, "error": e.to_string()}));
                        errors.lock().unwrap_or_else(|p| p.into_inner()).push(e.to_string());
                        None
                    }
                };
                records.lock().unwrap_or_else(|p| p.into_inner()).push(DecisionRecord {
                    decision,
                    quantiles: analysed.out.quantiles,
                    history_hours: analysed.job.hours,
                    train_seconds: analysed.out.train_seconds,
                    predict_seconds: analysed.out.predict_seconds,
                    holdout_mse: analysed.out.holdout_mse,
                    attempts,
                });
            }
        })
    };

    let (ingested, rejected) = monitor(cfg, reports, &job_tx, &events);
    drop(job_tx);
    for worker in [analytics, decider, actuator] {
        worker
            .join()
            .map_err(|_| RappError::Config("pipeline worker panicked".into()))?;
    }
    events.flush();

    let records = std::mem::take(&mut *records.lock().unwrap_or_else(|p| p.into_inner()));
    let errors = std::mem::take(&mut *errors.lock().unwrap_or_else(|p| p.into_inner()));
    Ok(RunReport {
        ingested,
        rejected,
        records,
        errors,
    })
}

fn monitor(cfg: &RappConfig, reports: &Receiver<O1Message>, jobs: &mpsc::Sender<Job>, events: &EventLog) -> (usize, usize) {
    let mut store = MonitoringStore::new(cfg.retention_hours);
    let needed = min_history(&cfg.model);
    let (mut ingested, mut rejected) = (0, 0);
    loop {
        if let Some(stop) = cfg.stop_after_hours {
            if !store.is_empty() && store.tenants().all(|t| store.total_ingested(t) >= stop) {
                break;
            }
        }
        let msg = match reports.recv_timeout(Duration::from_millis(100)) {
            Ok(m) => m,
            Err(RecvTimeoutError::Timeout) => continue,
            Err(RecvTimeoutError::Disconnected) => break,
        };
        let stamp = format_timestamp(msg.timestamp);
        match store.ingest_message(&msg) {
            Ok(outcome) => {
                ingested += 1;
                let hours = store.total_ingested(&msg.tenant_id);
                events.log(
                    "ingest",
                    json!({"tenant_id": msg.tenant_id, "timestamp": stamp, "accepted": true, "registered": outcome == crate::store::Ingested::Registered}),
                );
                if hours >= needed && hours % cfg.cadence_hours == 0 {
                    let history = store.snapshot(&msg.tenant_id).expect("tenant was just ingested");
                    if jobs.send(Job { history, hours }).is_err() {
                        break;
                    }
                }
            }
            Err(e) => {
                rejected += 1;
                events.log(
                    "ingest",
                    json!({"tenant_id": msg.tenant_id, "timestamp": stamp, "accepted": false, "reason": e.to_string()}),
                );
            }
        }
    }
    (ingested, rejected)
}

/// Connects to `cfg.endpoint` and runs the loop over that session.
pub fn run_connected(cfg: &RappConfig) -> Result<RunReport> {
    cfg.validate()?;
    let mut client = ClientConfig::new(&cfg.endpoint);
    client.ack_timeout = Duration::from_millis(cfg.ack_timeout_ms);
    let session = ClientSession::connect(client)?;
    let events = Arc::new(match &cfg.event_log {
        Some(path) => EventLog::to_file(path)?,
        None => EventLog::disabled(),
    });
    let sink: Arc<dyn AllocationSink> = Arc::new(session.sender());
    run(cfg, session.reports(), sink, events)
}
