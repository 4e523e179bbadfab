use rand::Rng;

use super::{EstimatorConfig, ForecastInput, TrainingWindow, STEP_FEATURES};
use crate::error::Result;
use crate::nn::{Activation, Dense, Graph, LstmCell, ParameterSet, Tensor, Var};

/// Deterministic baseline: one LSTM layer of `lstm_neurons` units read over
/// the context, then a linear layer giving the next hour. Multi-step
/// forecasts slide the window forward one predicted value at a time.
#[derive(Debug, Clone)]
pub struct LstmBaseline {
    cell: LstmCell,
    out: Dense,
    context: usize,
    horizon: usize,
}

impl LstmBaseline {
    pub(crate) fn init<R: Rng>(
        cfg: &EstimatorConfig,
        params: &mut ParameterSet,
        rng: &mut R,
    ) -> Result<Self> {
        let cell = LstmCell::init(params, "lstm.cell", STEP_FEATURES, cfg.lstm_neurons, rng)?;
        let out = Dense::init(params, "lstm.out", cfg.lstm_neurons, 1, Activation::Identity, rng)?;
        Ok(Self {
            cell,
            out,
            context: cfg.context_length,
            horizon: cfg.horizon,
        })
    }

    /// Squared error of the one-step-ahead prediction of the first target.
    pub(crate) fn loss(&self, g: &mut Graph, p: &[Var], w: &TrainingWindow) -> Result<Var> {
        let zeros = g.constant(Tensor::zeros(1, self.cell.hidden));
        let (mut h, mut c) = (zeros, zeros);
        for t in 1..=self.context {
            let x = g.constant(Tensor::row_vector(w.step_input(t).to_vec()));
            (h, c) = self.cell.forward(g, p, x, h, c)?;
        }
        let y = self.out.forward(g, p, h)?;
        g.squared_error(y, Tensor::scalar(w.target[0]))
    }

    pub(crate) fn predict(&self, params: &ParameterSet, input: &ForecastInput) -> Result<Vec<f64>> {
        let mut values = input.context.clone();
        let zeros = Tensor::zeros(1, self.cell.hidden);
        for j in 0..self.horizon {
            // window of the `context` most recent values, observed or predicted
            let offset = j;
            let (mut h, mut c) = (zeros.clone(), zeros.clone());
            for t in 1..=self.context {
                let lag = values[offset + t - 1];
                let x = Tensor::row_vector(input.step_input(offset + t, lag).to_vec());
                (h, c) = self.cell.eval(params, &x, &h, &c)?;
            }
            let y = self.out.eval(params, &h)?;
            values.push(y.data()[0]);
        }
        Ok(values.split_off(self.context))
    }
}
