use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{gaussian_draw, EstimatorConfig, ForecastInput, TrainingWindow, STEP_FEATURES};
use crate::error::Result;
use crate::nn::{
    attention_eval, attention_forward, Activation, Dense, GaussianHead, GaussianParams, Graph, LayerNorm,
    ParameterSet, Tensor, Var,
};

/// Single-head attention with input and output projections.
#[derive(Debug, Clone)]
struct Attention {
    q: Dense,
    k: Dense,
    v: Dense,
    o: Dense,
}

impl Attention {
    fn init<R: Rng>(params: &mut ParameterSet, name: &str, d: usize, rng: &mut R) -> Result<Self> {
        let mut proj = |suffix: &str| {
            Dense::init(params, &format!("{name}.{suffix}"), d, d, Activation::Identity, rng)
        };
        Ok(Self {
            q: proj("q")?,
            k: proj("k")?,
            v: proj("v")?,
            o: proj("o")?,
        })
    }

    fn forward(&self, g: &mut Graph, p: &[Var], x: Var, memory: Var, causal: bool) -> Result<Var> {
        let q = self.q.forward(g, p, x)?;
        let k = self.k.forward(g, p, memory)?;
        let v = self.v.forward(g, p, memory)?;
        let a = attention_forward(g, q, k, v, causal)?;
        self.o.forward(g, p, a)
    }
}

#[derive(Debug, Clone)]
struct FeedForward {
    up: Dense,
    down: Dense,
}

impl FeedForward {
    fn init<R: Rng>(
        params: &mut ParameterSet,
        name: &str,
        d: usize,
        inner: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            up: Dense::init(params, &format!("{name}.up"), d, inner, Activation::Relu, rng)?,
            down: Dense::init(params, &format!("{name}.down"), inner, d, Activation::Identity, rng)?,
        })
    }

    fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        let h = self.up.forward(g, p, x)?;
        self.down.forward(g, p, h)
    }

    fn eval(&self, params: &ParameterSet, x: &Tensor) -> Result<Tensor> {
        self.down.eval(params, &self.up.eval(params, x)?)
    }
}

/// Sinusoidal position encoding rows `first..first + len`.
fn positions(first: usize, len: usize, d: usize) -> Tensor {
    let mut data = Vec::with_capacity(len * d);
    for pos in first..first + len {
        for i in 0..d {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 / rate;
            data.push(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::from_rows(len, d, data)
}

/// One encoder layer over the context and one decoder layer over the
/// horizon, with causal self-attention in the decoder and cross-attention to
/// the encoded context. Each decoder position reads the previous hour's
/// value, so sampling proceeds autoregressively as in the recurrent model.
#[derive(Debug, Clone)]
pub struct Transformer {
    enc_embed: Dense,
    enc_attn: Attention,
    enc_norm1: LayerNorm,
    enc_ff: FeedForward,
    enc_norm2: LayerNorm,
    dec_embed: Dense,
    dec_self: Attention,
    dec_norm1: LayerNorm,
    dec_cross: Attention,
    dec_norm2: LayerNorm,
    dec_ff: FeedForward,
    dec_norm3: LayerNorm,
    head: GaussianHead,
    d: usize,
    context: usize,
    horizon: usize,
}

impl Transformer {
    pub(crate) fn init<R: Rng>(
        cfg: &EstimatorConfig,
        params: &mut ParameterSet,
        rng: &mut R,
    ) -> Result<Self> {
        let d = cfg.transformer_model_dim;
        let ff = cfg.transformer_feedforward_dim;
        Ok(Self {
            enc_embed: Dense::init(params, "tf.enc.embed", STEP_FEATURES, d, Activation::Identity, rng)?,
            enc_attn: Attention::init(params, "tf.enc.attn", d, rng)?,
            enc_norm1: LayerNorm::init(params, "tf.enc.norm1", d)?,
            enc_ff: FeedForward::init(params, "tf.enc.ff", d, ff, rng)?,
            enc_norm2: LayerNorm::init(params, "tf.enc.norm2", d)?,
            dec_embed: Dense::init(params, "tf.dec.embed", STEP_FEATURES, d, Activation::Identity, rng)?,
            dec_self: Attention::init(params, "tf.dec.self", d, rng)?,
            dec_norm1: LayerNorm::init(params, "tf.dec.norm1", d)?,
            dec_cross: Attention::init(params, "tf.dec.cross", d, rng)?,
            dec_norm2: LayerNorm::init(params, "tf.dec.norm2", d)?,
            dec_ff: FeedForward::init(params, "tf.dec.ff", d, ff, rng)?,
            dec_norm3: LayerNorm::init(params, "tf.dec.norm3", d)?,
            head: GaussianHead::init(params, "tf.head", d, 1, rng)?,
            d,
            context: cfg.context_length,
            horizon: cfg.horizon,
        })
    }

    /// Encoder rows: each context hour's own value and covariates.
    fn encoder_input(context: &[f64], covariates: &[[f64; 2]]) -> Tensor {
        let data = context
            .iter()
            .zip(covariates)
            .flat_map(|(v, c)| [*v, c[0], c[1]])
            .collect();
        Tensor::from_rows(context.len(), STEP_FEATURES, data)
    }

    fn encode(&self, g: &mut Graph, p: &[Var], input: Tensor) -> Result<Var> {
        let x = g.constant(input);
        let x = self.enc_embed.forward(g, p, x)?;
        let pe = g.constant(positions(0, self.context, self.d));
        let x = g.add(x, pe)?;
        let a = self.enc_attn.forward(g, p, x, x, false)?;
        let x = g.add(x, a)?;
        let x = self.enc_norm1.forward(g, p, x)?;
        let f = self.enc_ff.forward(g, p, x)?;
        let x = g.add(x, f)?;
        self.enc_norm2.forward(g, p, x)
    }

    pub(crate) fn loss(&self, g: &mut Graph, p: &[Var], w: &TrainingWindow) -> Result<Var> {
        let memory = self.encode(g, p, Self::encoder_input(&w.context, &w.covariates))?;
        let dec: Vec<f64> = (self.context..w.len()).flat_map(|t| w.step_input(t)).collect();
        let y = g.constant(Tensor::from_rows(self.horizon, STEP_FEATURES, dec));
        let y = self.dec_embed.forward(g, p, y)?;
        let pe = g.constant(positions(self.context, self.horizon, self.d));
        let y = g.add(y, pe)?;
        let a = self.dec_self.forward(g, p, y, y, true)?;
        let y = g.add(y, a)?;
        let y = self.dec_norm1.forward(g, p, y)?;
        let c = self.dec_cross.forward(g, p, y, memory, false)?;
        let y = g.add(y, c)?;
        let y = self.dec_norm2.forward(g, p, y)?;
        let f = self.dec_ff.forward(g, p, y)?;
        let y = g.add(y, f)?;
        let y = self.dec_norm3.forward(g, p, y)?;
        let (mu, sigma) = self.head.forward(g, p, y)?;
        g.gaussian_nll(mu, sigma, Tensor::from_rows(self.horizon, 1, w.target.clone()))
    }

    pub(crate) fn sample(
        &self,
        params: &ParameterSet,
        input: &ForecastInput,
        samples: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Vec<f64>>> {
        self.decode(params, input, samples, |_, out, s| {
            gaussian_draw(rng, out.mu.data()[s], out.sigma.data()[s])
        })
    }

    /// Batched autoregressive decoding. `next(step, params, path)` picks the
    /// value fed back for each path. Decoder keys and values of earlier
    /// positions are cached per path, so each step only processes the newest
    /// position.
    fn decode(
        &self,
        params: &ParameterSet,
        input: &ForecastInput,
        samples: usize,
        mut next: impl FnMut(usize, &GaussianParams, usize) -> f64,
    ) -> Result<Vec<Vec<f64>>> {
        let d = self.d;
        let memory = {
            let mut g = Graph::new();
            let p = g.params(params);
            let m = self.encode(
                &mut g,
                &p,
                Self::encoder_input(&input.context, &input.covariates[..self.context]),
            )?;
            g.value(m).clone()
        };
        let cross_k = self.dec_cross.k.eval(params, &memory)?;
        let cross_v = self.dec_cross.v.eval(params, &memory)?;
        let pe = positions(self.context, self.horizon, d);

        let mut keys: Vec<Vec<f64>> = vec![Vec::with_capacity(self.horizon * d); samples];
        let mut values: Vec<Vec<f64>> = vec![Vec::with_capacity(self.horizon * d); samples];
        let mut prev = vec![input.context[self.context - 1]; samples];
        let mut paths = vec![Vec::with_capacity(self.horizon); samples];
        let scale = 1.0 / (d as f64).sqrt();

        for j in 0..self.horizon {
            let t = self.context + j;
            let x: Vec<f64> = prev.iter().flat_map(|lag| input.step_input(t, *lag)).collect();
            let y = self
                .dec_embed
                .eval(params, &Tensor::from_rows(samples, STEP_FEATURES, x))?
                .add_row(&Tensor::row_vector(pe.row(j).to_vec()))?;
            let q = self.dec_self.q.eval(params, &y)?;
            let k = self.dec_self.k.eval(params, &y)?;
            let v = self.dec_self.v.eval(params, &y)?;

            let mut attended = Vec::with_capacity(samples * d);
            for s in 0..samples {
                keys[s].extend_from_slice(k.row(s));
                values[s].extend_from_slice(v.row(s));
                let ks = Tensor::from_rows(j + 1, d, keys[s].clone());
                let vs = Tensor::from_rows(j + 1, d, values[s].clone());
                let qs = Tensor::row_vector(q.row(s).to_vec());
                let w = qs.matmul_nt(&ks)?.map(|x| x * scale).softmax_rows(false);
                attended.extend_from_slice(w.matmul(&vs)?.data());
            }
            let a = self
                .dec_self
                .o
                .eval(params, &Tensor::from_rows(samples, d, attended))?;
            let mut y1 = y;
            y1.add_assign(&a);
            let y1 = self.dec_norm1.eval(params, &y1);

            let cq = self.dec_cross.q.eval(params, &y1)?;
            let c = self
                .dec_cross
                .o
                .eval(params, &attention_eval(&cq, &cross_k, &cross_v, false)?)?;
            let mut y2 = y1;
            y2.add_assign(&c);
            let y2 = self.dec_norm2.eval(params, &y2);

            let f = self.dec_ff.eval(params, &y2)?;
            let mut y3 = y2;
            y3.add_assign(&f);
            let y3 = self.dec_norm3.eval(params, &y3);

            let out = self.head.eval(params, &y3)?;
            for (s, path) in paths.iter_mut().enumerate() {
                let z = next(j, &out, s);
                path.push(z);
                prev[s] = z;
            }
        }
        Ok(paths)
    }
}
