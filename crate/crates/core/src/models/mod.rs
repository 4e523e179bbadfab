//! The four estimators behind one train / predict contract.
//!
//! All networks see standardized demand. Every input step carries the lagged
//! demand value and the calendar covariates of the hour being predicted.

mod deepar;
mod lstm;
mod sff;
mod transformer;

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{AdamState, Graph, ParameterSet, Var, CLIP_NORM, LEARNING_RATE};
use crate::ts::{self, calendar_covariates, SampleForecast, Scaler, TimeSeries};

pub use deepar::DeepAr;
pub use lstm::LstmBaseline;
pub use sff::Sff;
pub use transformer::Transformer;

/// Width of one input step: lagged value plus two calendar covariates.
pub(crate) const STEP_FEATURES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Lstm,
    Sff,
    #[serde(rename = "deepar")]
    DeepAr,
    Transformer,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [
        EstimatorKind::Lstm,
        EstimatorKind::Sff,
        EstimatorKind::DeepAr,
        EstimatorKind::Transformer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Lstm => "lstm",
            EstimatorKind::Sff => "sff",
            EstimatorKind::DeepAr => "deepar",
            EstimatorKind::Transformer => "transformer",
        }
    }

    pub fn is_probabilistic(self) -> bool {
        self != EstimatorKind::Lstm
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model {s:?}")))
    }
}

/// Hyperparameters. Defaults are the benchmark configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub context_length: usize,
    pub horizon: usize,
    pub num_eval_samples: usize,
    pub seed: u64,
    pub sff_hidden_dims: Vec<usize>,
    pub deepar_rnn_layers: usize,
    pub deepar_cells_per_layer: usize,
    pub transformer_model_dim: usize,
    pub transformer_feedforward_dim: usize,
    /// Hidden size of the deterministic baseline.
    pub lstm_neurons: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self::new(EstimatorKind::DeepAr)
    }
}

impl EstimatorConfig {
    pub fn new(kind: EstimatorKind) -> Self {
        Self {
            kind,
            epochs: 5,
            batch_size: 1,
            context_length: 24,
            horizon: 24,
            num_eval_samples: 100,
            seed: 0,
            sff_hidden_dims: vec![40, 40],
            deepar_rnn_layers: 2,
            deepar_cells_per_layer: 40,
            transformer_model_dim: 32,
            transformer_feedforward_dim: 4,
            lstm_neurons: 1,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("epochs", self.epochs),
            ("context_length", self.context_length),
            ("horizon", self.horizon),
            ("num_eval_samples", self.num_eval_samples),
            ("deepar_rnn_layers", self.deepar_rnn_layers),
            ("deepar_cells_per_layer", self.deepar_cells_per_layer),
            ("transformer_model_dim", self.transformer_model_dim),
            ("transformer_feedforward_dim", self.transformer_feedforward_dim),
            ("lstm_neurons", self.lstm_neurons),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if self.batch_size != 1 {
            return Err(Error::InvalidArgument(format!(
                "batch_size {} unsupported; only 1 is implemented",
                self.batch_size
            )));
        }
        if self.sff_hidden_dims.is_empty() || self.sff_hidden_dims.contains(&0) {
            return Err(Error::InvalidArgument("sff_hidden_dims must be non-empty and positive".into()));
        }
        Ok(())
    }

    /// Samples drawn per forecast: `num_eval_samples`, or 1 for the baseline.
    pub fn samples_per_forecast(&self) -> usize {
        if self.kind.is_probabilistic() {
            self.num_eval_samples
        } else {
            1
        }
    }
}

/// One supervised example: a context, the following horizon, and the
/// calendar covariates of every step in both.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingWindow {
    pub context: Vec<f64>,
    pub target: Vec<f64>,
    /// `context.len() + target.len()` entries of `[hour/24, weekday/7]`.
    pub covariates: Vec<[f64; 2]>,
}

impl TrainingWindow {
    pub fn len(&self) -> usize {
        self.context.len() + self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Demand at position `t` of the concatenated context and target.
    pub fn value(&self, t: usize) -> f64 {
        if t < self.context.len() {
            self.context[t]
        } else {
            self.target[t - self.context.len()]
        }
    }

    /// Input features for position `t`: lagged value and covariates of `t`.
    pub(crate) fn step_input(&self, t: usize) -> [f64; STEP_FEATURES] {
        let lag = if t == 0 { 0.0 } else { self.value(t - 1) };
        let c = self.covariates[t];
        [lag, c[0], c[1]]
    }
}

fn windows_from(
    values: &[f64],
    start: DateTime<Utc>,
    context: usize,
    horizon: usize,
) -> Result<Vec<TrainingWindow>> {
    let span = context + horizon;
    if values.len() < span {
        return Err(Error::TooShort {
            needed: span,
            got: values.len(),
        });
    }
    let covs: Vec<[f64; 2]> = (0..values.len())
        .map(|i| calendar_covariates(start + ts::step() * i as i32))
        .collect();
    Ok((0..=values.len() - span)
        .map(|s| TrainingWindow {
            context: values[s..s + context].to_vec(),
            target: values[s + context..s + span].to_vec(),
            covariates: covs[s..s + span].to_vec(),
        })
        .collect())
}

/// Every stride-1 window of `context_length + horizon` points.
pub fn make_windows(series: &TimeSeries, cfg: &EstimatorConfig) -> Result<Vec<TrainingWindow>> {
    windows_from(series.values(), series.start(), cfg.context_length, cfg.horizon)
}

/// Scaled conditioning data for one forecast.
#[derive(Debug, Clone)]
pub(crate) struct ForecastInput {
    /// Last `context_length` standardized values.
    pub context: Vec<f64>,
    /// Covariates for the context hours followed by the horizon hours.
    pub covariates: Vec<[f64; 2]>,
}

impl ForecastInput {
    fn new(context: &[f64], first_context_hour: DateTime<Utc>, horizon: usize) -> Self {
        let covariates = (0..context.len() + horizon)
            .map(|i| calendar_covariates(first_context_hour + ts::step() * i as i32))
            .collect();
        Self {
            context: context.to_vec(),
            covariates,
        }
    }

    /// Input features for position `t` given the value observed or sampled at `t - 1`.
    pub fn step_input(&self, t: usize, lag: f64) -> [f64; STEP_FEATURES] {
        let c = self.covariates[t];
        [lag, c[0], c[1]]
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Network {
    Sff(Sff),
    DeepAr(DeepAr),
    Transformer(Transformer),
    Lstm(LstmBaseline),
}

impl Network {
    fn init(cfg: &EstimatorConfig, params: &mut ParameterSet) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(match cfg.kind {
            EstimatorKind::Sff => Network::Sff(Sff::init(cfg, params, &mut rng)?),
            EstimatorKind::DeepAr => Network::DeepAr(DeepAr::init(cfg, params, &mut rng)?),
            EstimatorKind::Transformer => {
                Network::Transformer(Transformer::init(cfg, params, &mut rng)?)
            }
            EstimatorKind::Lstm => Network::Lstm(LstmBaseline::init(cfg, params, &mut rng)?),
        })
    }

    fn loss(&self, g: &mut Graph, p: &[Var], w: &TrainingWindow) -> Result<Var> {
        match self {
            Network::Sff(n) => n.loss(g, p, w),
            Network::DeepAr(n) => n.loss(g, p, w),
            Network::Transformer(n) => n.loss(g, p, w),
            Network::Lstm(n) => n.loss(g, p, w),
        }
    }

    /// Standardized sample paths, `samples x horizon`.
    fn sample(
        &self,
        params: &ParameterSet,
        input: &ForecastInput,
        samples: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Vec<f64>>> {
        match self {
            Network::Sff(n) => n.sample(params, input, samples, rng),
            Network::DeepAr(n) => n.sample(params, input, samples, rng),
            Network::Transformer(n) => n.sample(params, input, samples, rng),
            Network::Lstm(n) => n.predict(params, input).map(|p| vec![p]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub train_seconds: f64,
    pub epoch_losses: Vec<f64>,
    pub windows: usize,
}

/// Anything that turns a context into sample paths over the next horizon.
pub trait Forecaster: Send + Sync {
    fn context_length(&self) -> usize;

    fn horizon(&self) -> usize;

    /// Forecast of the `horizon` hours following `context`.
    fn forecast(&self, context: &TimeSeries, seed: u64) -> Result<SampleForecast>;
}

/// A trained model. Immutable; identical inputs give identical forecasts.
#[derive(Debug, Clone)]
pub struct Predictor {
    cfg: EstimatorConfig,
    scaler: Scaler,
    params: ParameterSet,
    network: Network,
    metadata: TrainingMetadata,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    config: EstimatorConfig,
    scaler: Scaler,
    metadata: TrainingMetadata,
}

/// Trains `cfg.kind` on `series` for exactly `cfg.epochs` shuffled passes.
pub fn train(series: &TimeSeries, cfg: &EstimatorConfig) -> Result<Predictor> {
    cfg.validate()?;
    let started = Instant::now();
    let (scaler, scaled) = ts::standardize(series);
    let windows = windows_from(&scaled, series.start(), cfg.context_length, cfg.horizon)?;

    let mut params = ParameterSet::new();
    let network = Network::init(cfg, &mut params)?;
    let mut adam = AdamState::new(&params, LEARNING_RATE);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_5EED);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for &wi in &order {
            params.zero_grads();
            let mut g = Graph::new();
            let p = g.params(&params);
            let loss = network.loss(&mut g, &p, &windows[wi])?;
            let value = g.backward(loss, &mut params)?;
            let norm = params.clip_grad_norm(CLIP_NORM);
            if !value.is_finite() || !norm.is_finite() {
                return Err(Error::NonFiniteLoss {
                    loss: value,
                    epoch,
                    window: wi,
                });
            }
            adam.step(&mut params);
            total += value;
        }
        epoch_losses.push(total / windows.len() as f64);
    }

    Ok(Predictor {
        cfg: cfg.clone(),
        scaler,
        params,
        network,
        metadata: TrainingMetadata {
            train_seconds: started.elapsed().as_secs_f64(),
            epoch_losses,
            windows: windows.len(),
        },
    })
}

impl Predictor {
    pub fn kind(&self) -> EstimatorKind {
        self.cfg.kind
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.cfg
    }

    pub fn scaler(&self) -> Scaler {
        self.scaler
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn metadata(&self) -> &TrainingMetadata {
        &self.metadata
    }

    /// Short content fingerprint of the trained parameters.
    pub fn fingerprint(&self) -> String {
        // FNV-1a; only needs to be stable, not cryptographic
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.params.to_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        format!("{h:016x}")
    }

    pub fn predict(&self, context: &TimeSeries, seed: u64) -> Result<SampleForecast> {
        let ctx = self.cfg.context_length;
        if context.len() < ctx {
            return Err(Error::TooShort {
                needed: ctx,
                got: context.len(),
            });
        }
        let first = context.len() - ctx;
        let scaled: Vec<f64> = context.values()[first..]
            .iter()
            .map(|v| self.scaler.scale(*v))
            .collect();
        let input = ForecastInput::new(&scaled, context.timestamp(first), self.cfg.horizon);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let paths = self.network.sample(
            &self.params,
            &input,
            self.cfg.samples_per_forecast(),
            &mut rng,
        )?;
        let paths = paths
            .into_iter()
            .map(|p| p.into_iter().map(|z| self.scaler.inverse(z).max(0.0)).collect())
            .collect();
        SampleForecast::new(context.end(), paths)
    }

    /// Writes `<stem>.prbm` (parameters) and `<stem>.json` (config, scaler,
    /// training metadata).
    pub fn save(&self, stem: &Path) -> Result<()> {
        if let Some(dir) = stem.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        fs::write(stem.with_extension("prbm"), self.params.to_bytes())?;
        let sidecar = Sidecar {
            config: self.cfg.clone(),
            scaler: self.scaler,
            metadata: self.metadata.clone(),
        };
        fs::write(
            stem.with_extension("json"),
            serde_json::to_string_pretty(&sidecar)?,
        )?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let sidecar: Sidecar = serde_json::from_str(&fs::read_to_string(stem.with_extension("json"))?)?;
        let loaded = ParameterSet::from_bytes(&fs::read(stem.with_extension("prbm"))?)?;
        let mut params = ParameterSet::new();
        let network = Network::init(&sidecar.config, &mut params)?;
        if loaded.len() != params.len() {
            return Err(Error::Format(format!(
                "expected {} parameters, file has {}",
                params.len(),
                loaded.len()
            )));
        }
        for id in params.ids().collect::<Vec<_>>() {
            let src = loaded.value(id);
            if loaded.name(id) != params.name(id) || src.shape() != params.value(id).shape() {
                return Err(Error::Format(format!(
                    "parameter {} does not match the configured architecture",
                    loaded.name(id)
                )));
            }
            *params.value_mut(id) = src.clone();
        }
        Ok(Self {
            cfg: sidecar.config,
            scaler: sidecar.scaler,
            params,
            network,
            metadata: sidecar.metadata,
        })
    }
}

impl Forecaster for Predictor {
    fn context_length(&self) -> usize {
        self.cfg.context_length
    }

    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    fn forecast(&self, context: &TimeSeries, seed: u64) -> Result<SampleForecast> {
        self.predict(context, seed)
    }
}

/// Result of a rolling evaluation over a test slice.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub mse: f64,
    pub predict_time: Duration,
    pub block_times: Vec<Duration>,
    pub forecasts: Vec<SampleForecast>,
    /// Actual values covered by `forecasts`, block after block.
    pub actual: Vec<f64>,
}

impl Evaluation {
    pub fn mean_block_millis(&self) -> f64 {
        self.predict_time.as_secs_f64() * 1e3 / self.block_times.len() as f64
    }
}

/// Rolling evaluation over non-overlapping horizon-sized blocks of `test`.
///
/// `history` must end where `test` starts; each block is forecast from the
/// `context_length` hours preceding it. MSE is taken over every evaluated hour.
pub fn evaluate(
    f: &dyn Forecaster,
    history: &TimeSeries,
    test: &TimeSeries,
    seed: u64,
) -> Result<Evaluation> {
    let (ctx, h) = (f.context_length(), f.horizon());
    if test.len() < h {
        return Err(Error::TooShort {
            needed: h,
            got: test.len(),
        });
    }
    if history.end() != test.start() {
        return Err(Error::InvalidArgument("history must end where test starts".into()));
    }
    let mut all = history.values().to_vec();
    all.extend_from_slice(test.values());
    let full = TimeSeries::new(test.tenant_id(), history.start(), all)?;
    let offset = history.len();
    if offset < ctx {
        return Err(Error::TooShort {
            needed: ctx,
            got: offset,
        });
    }

    let blocks = test.len() / h;
    let mut block_times = Vec::with_capacity(blocks);
    let mut forecasts = Vec::with_capacity(blocks);
    let mut predicted = Vec::with_capacity(blocks * h);
    for b in 0..blocks {
        let at = offset + b * h;
        let context = full.slice(at - ctx..at)?;
        let t = Instant::now();
        let fc = f.forecast(&context, seed.wrapping_add(b as u64))?;
        block_times.push(t.elapsed());
        if fc.horizon() != h {
            return Err(Error::LengthMismatch {
                expected: h,
                got: fc.horizon(),
            });
        }
        predicted.extend(ts::mean_point(&fc).values);
        forecasts.push(fc);
    }
    let actual = test.values()[..blocks * h].to_vec();
    Ok(Evaluation {
        mse: ts::mse_values(&actual, &predicted)?,
        predict_time: block_times.iter().sum(),
        block_times,
        forecasts,
        actual,
    })
}

/// Draws one value from `N(mu, sigma)`.
pub(crate) fn gaussian_draw(rng: &mut ChaCha8Rng, mu: f64, sigma: f64) -> f64 {
    use rand::Rng;
    let z: f64 = rng.sample(rand_distr::StandardNormal);
    mu + sigma * z
}
