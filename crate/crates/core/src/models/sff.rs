use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{gaussian_draw, EstimatorConfig, ForecastInput, TrainingWindow};
use crate::error::Result;
use crate::nn::{Activation, Dense, GaussianHead, Graph, ParameterSet, Tensor, Var};

/// Simple feed-forward estimator: the context window and the covariates of
/// the first forecast hour go through a ReLU MLP whose head emits one
/// Gaussian per horizon step.
#[derive(Debug, Clone)]
pub struct Sff {
    hidden: Vec<Dense>,
    head: GaussianHead,
    context: usize,
    horizon: usize,
}

impl Sff {
    pub(crate) fn init<R: Rng>(
        cfg: &EstimatorConfig,
        params: &mut ParameterSet,
        rng: &mut R,
    ) -> Result<Self> {
        let mut inputs = cfg.context_length + 2;
        let mut hidden = Vec::new();
        for (i, width) in cfg.sff_hidden_dims.iter().enumerate() {
            hidden.push(Dense::init(params, &format!("sff.hidden{i}"), inputs, *width, Activation::Relu, rng)?);
            inputs = *width;
        }
        let head = GaussianHead::init(params, "sff.head", inputs, cfg.horizon, rng)?;
        Ok(Self {
            hidden,
            head,
            context: cfg.context_length,
            horizon: cfg.horizon,
        })
    }

    fn features(context: &[f64], cov: [f64; 2]) -> Tensor {
        let mut x = context.to_vec();
        x.extend_from_slice(&cov);
        Tensor::row_vector(x)
    }

    pub(crate) fn loss(&self, g: &mut Graph, p: &[Var], w: &TrainingWindow) -> Result<Var> {
        let mut x = g.constant(Self::features(&w.context, w.covariates[self.context]));
        for layer in &self.hidden {
            x = layer.forward(g, p, x)?;
        }
        let (mu, sigma) = self.head.forward(g, p, x)?;
        g.gaussian_nll(mu, sigma, Tensor::row_vector(w.target.clone()))
    }

    pub(crate) fn sample(
        &self,
        params: &ParameterSet,
        input: &ForecastInput,
        samples: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Vec<f64>>> {
        let mut x = Self::features(&input.context, input.covariates[self.context]);
        for layer in &self.hidden {
            x = layer.eval(params, &x)?;
        }
        let out = self.head.eval(params, &x)?;
        Ok((0..samples)
            .map(|_| {
                (0..self.horizon)
                    .map(|h| gaussian_draw(rng, out.mu.data()[h], out.sigma.data()[h]))
                    .collect()
            })
            .collect())
    }
}
