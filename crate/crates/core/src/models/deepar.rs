use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{gaussian_draw, EstimatorConfig, ForecastInput, TrainingWindow, STEP_FEATURES};
use crate::error::Result;
use crate::nn::{GaussianHead, Graph, LstmCell, ParameterSet, Tensor, Var};

/// Autoregressive recurrent estimator: a stacked LSTM reads lagged demand
/// plus covariates and emits a Gaussian for the next hour. Forecasts are
/// drawn by ancestral sampling, feeding each draw back as the next input.
#[derive(Debug, Clone)]
pub struct DeepAr {
    layers: Vec<LstmCell>,
    head: GaussianHead,
    context: usize,
    horizon: usize,
}

impl DeepAr {
    pub(crate) fn init<R: Rng>(
        cfg: &EstimatorConfig,
        params: &mut ParameterSet,
        rng: &mut R,
    ) -> Result<Self> {
        let cells = cfg.deepar_cells_per_layer;
        let mut layers = Vec::with_capacity(cfg.deepar_rnn_layers);
        let mut inputs = STEP_FEATURES;
        for l in 0..cfg.deepar_rnn_layers {
            layers.push(LstmCell::init(params, &format!("deepar.lstm{l}"), inputs, cells, rng)?);
            inputs = cells;
        }
        let head = GaussianHead::init(params, "deepar.head", cells, 1, rng)?;
        Ok(Self {
            layers,
            head,
            context: cfg.context_length,
            horizon: cfg.horizon,
        })
    }

    /// Teacher-forced unroll over the whole window; the likelihood covers
    /// every position that has a lagged input.
    pub(crate) fn loss(&self, g: &mut Graph, p: &[Var], w: &TrainingWindow) -> Result<Var> {
        let width = self.layers[0].hidden;
        let zeros = g.constant(Tensor::zeros(1, width));
        let mut state: Vec<(Var, Var)> = vec![(zeros, zeros); self.layers.len()];
        let mut outputs = Vec::with_capacity(w.len() - 1);
        for t in 1..w.len() {
            let mut x = g.constant(Tensor::row_vector(w.step_input(t).to_vec()));
            for (cell, s) in self.layers.iter().zip(state.iter_mut()) {
                *s = cell.forward(g, p, x, s.0, s.1)?;
                x = s.0;
            }
            outputs.push(x);
        }
        let hidden = g.concat_rows(&outputs)?;
        let (mu, sigma) = self.head.forward(g, p, hidden)?;
        let target: Vec<f64> = (1..w.len()).map(|t| w.value(t)).collect();
        let n = target.len();
        g.gaussian_nll(mu, sigma, Tensor::from_rows(n, 1, target))
    }

    fn step(
        &self,
        params: &ParameterSet,
        x: &Tensor,
        state: &mut [(Tensor, Tensor)],
    ) -> Result<Tensor> {
        let mut x = x.clone();
        for (cell, s) in self.layers.iter().zip(state.iter_mut()) {
            let (h, c) = cell.eval(params, &x, &s.0, &s.1)?;
            x = h.clone();
            *s = (h, c);
        }
        Ok(x)
    }

    pub(crate) fn sample(
        &self,
        params: &ParameterSet,
        input: &ForecastInput,
        samples: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Vec<f64>>> {
        let width = self.layers[0].hidden;
        let mut state = vec![(Tensor::zeros(1, width), Tensor::zeros(1, width)); self.layers.len()];
        for t in 1..self.context {
            let x = Tensor::row_vector(input.step_input(t, input.context[t - 1]).to_vec());
            self.step(params, &x, &mut state)?;
        }

        // one row per sample path from here on
        let mut state: Vec<(Tensor, Tensor)> = state
            .into_iter()
            .map(|(h, c)| (repeat_row(&h, samples), repeat_row(&c, samples)))
            .collect();
        let mut prev = vec![input.context[self.context - 1]; samples];
        let mut paths = vec![Vec::with_capacity(self.horizon); samples];
        for j in 0..self.horizon {
            let t = self.context + j;
            let x: Vec<f64> = prev
                .iter()
                .flat_map(|lag| input.step_input(t, *lag))
                .collect();
            let x = Tensor::from_rows(samples, STEP_FEATURES, x);
            let hidden = self.step(params, &x, &mut state)?;
            let out = self.head.eval(params, &hidden)?;
            for (s, path) in paths.iter_mut().enumerate() {
                let z = gaussian_draw(rng, out.mu.data()[s], out.sigma.data()[s]);
                path.push(z);
                prev[s] = z;
            }
        }
        Ok(paths)
    }
}

fn repeat_row(t: &Tensor, rows: usize) -> Tensor {
    let data = (0..rows).flat_map(|_| t.row(0).iter().copied()).collect();
    Tensor::from_rows(rows, t.cols(), data)
}
