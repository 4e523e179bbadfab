//! Layers built from tape operations. Each layer also has an `eval` path on
//! plain tensors that computes the same function without recording, used for
//! batched sampling at prediction time.

use rand::Rng;

use super::graph::{softplus, Activation, Graph, Var};
use super::params::{ParamId, ParameterSet};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Additive floor on predicted standard deviations.
pub const SIGMA_FLOOR: f64 = 1e-4;

/// `activation(x · w + b)`.
pub fn dense_forward(g: &mut Graph, x: Var, w: Var, b: Var, act: Activation) -> Result<Var> {
    let xw = g.matmul(x, w)?;
    let z = g.add_row(xw, b)?;
    Ok(g.act(z, act))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub act: Activation,
}

impl Dense {
    pub fn init<R: Rng>(
        params: &mut ParameterSet,
        name: &str,
        inputs: usize,
        outputs: usize,
        act: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let w = params.insert_uniform(format!("{name}.w"), inputs, outputs, inputs, rng)?;
        let b = params.insert_uniform(format!("{name}.b"), 1, outputs, inputs, rng)?;
        Ok(Self { w, b, act })
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        dense_forward(g, x, p[self.w.0], p[self.b.0], self.act)
    }

    pub fn eval(&self, params: &ParameterSet, x: &Tensor) -> Result<Tensor> {
        let z = x.matmul(params.value(self.w))?.add_row(params.value(self.b))?;
        Ok(z.map(|v| self.act.apply(v)))
    }
}

/// LSTM cell with fused gate weights in `[input, forget, candidate, output]`
/// column order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LstmCell {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl LstmCell {
    pub fn init<R: Rng>(
        params: &mut ParameterSet,
        name: &str,
        inputs: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = inputs + hidden;
        let wx = params.insert_uniform(format!("{name}.wx"), inputs, 4 * hidden, fan_in, rng)?;
        let wh = params.insert_uniform(format!("{name}.wh"), hidden, 4 * hidden, fan_in, rng)?;
        let b = params.insert_uniform(format!("{name}.b"), 1, 4 * hidden, fan_in, rng)?;
        Ok(Self { wx, wh, b, hidden })
    }

    /// Returns `(h_t, c_t)`.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &[Var],
        x: Var,
        h_prev: Var,
        c_prev: Var,
    ) -> Result<(Var, Var)> {
        let hsz = self.hidden;
        if g.value(h_prev).cols() != hsz || g.value(c_prev).cols() != hsz {
            return Err(Error::shape(
                "lstm_cell",
                format!("state width must be {hsz}"),
            ));
        }
        let xw = g.matmul(x, p[self.wx.0])?;
        let hw = g.matmul(h_prev, p[self.wh.0])?;
        let z = g.add(xw, hw)?;
        let z = g.add_row(z, p[self.b.0])?;
        let i = g.slice_cols(z, 0, hsz)?;
        let f = g.slice_cols(z, hsz, hsz)?;
        let cand = g.slice_cols(z, 2 * hsz, hsz)?;
        let o = g.slice_cols(z, 3 * hsz, hsz)?;
        let i = g.act(i, Activation::Sigmoid);
        let f = g.act(f, Activation::Sigmoid);
        let cand = g.act(cand, Activation::Tanh);
        let o = g.act(o, Activation::Sigmoid);
        let keep = g.mul(f, c_prev)?;
        let write = g.mul(i, cand)?;
        let c = g.add(keep, write)?;
        let ct = g.act(c, Activation::Tanh);
        let h = g.mul(o, ct)?;
        Ok((h, c))
    }

    pub fn eval(
        &self,
        params: &ParameterSet,
        x: &Tensor,
        h_prev: &Tensor,
        c_prev: &Tensor,
    ) -> Result<(Tensor, Tensor)> {
        let hsz = self.hidden;
        let mut z = x.matmul(params.value(self.wx))?;
        z.add_assign(&h_prev.matmul(params.value(self.wh))?);
        let z = z.add_row(params.value(self.b))?;
        let rows = z.rows();
        let mut h = Tensor::zeros(rows, hsz);
        let mut c = Tensor::zeros(rows, hsz);
        for r in 0..rows {
            let zr = z.row(r);
            let cp = c_prev.row(r);
            for j in 0..hsz {
                let i = Activation::Sigmoid.apply(zr[j]);
                let f = Activation::Sigmoid.apply(zr[hsz + j]);
                let cand = zr[2 * hsz + j].tanh();
                let o = Activation::Sigmoid.apply(zr[3 * hsz + j]);
                let cv = f * cp[j] + i * cand;
                c.data_mut()[r * hsz + j] = cv;
                h.data_mut()[r * hsz + j] = o * cv.tanh();
            }
        }
        Ok((h, c))
    }
}

/// Scaled dot-product attention `softmax(q kᵀ / √d) v`.
pub fn attention_forward(g: &mut Graph, q: Var, k: Var, v: Var, causal: bool) -> Result<Var> {
    let d = g.value(q).cols();
    if g.value(k).cols() != d {
        return Err(Error::shape("attention", "query/key feature widths differ"));
    }
    if g.value(k).rows() != g.value(v).rows() {
        return Err(Error::shape("attention", "key/value lengths differ"));
    }
    let scores = g.matmul_nt(q, k)?;
    let scores = g.scale(scores, 1.0 / (d as f64).sqrt());
    let weights = g.softmax_rows(scores, causal);
    g.matmul(weights, v)
}

pub fn attention_eval(q: &Tensor, k: &Tensor, v: &Tensor, causal: bool) -> Result<Tensor> {
    let d = q.cols();
    if k.cols() != d || k.rows() != v.rows() {
        return Err(Error::shape("attention", "incompatible q/k/v"));
    }
    let scores = q.matmul_nt(k)?.map(|s| s / (d as f64).sqrt());
    scores.softmax_rows(causal).matmul(v)
}

/// Per-row layer normalization with learned gain and bias.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn init(params: &mut ParameterSet, name: &str, width: usize) -> Result<Self> {
        Ok(Self {
            gamma: params.insert(format!("{name}.gamma"), Tensor::filled(1, width, 1.0))?,
            beta: params.insert(format!("{name}.beta"), Tensor::zeros(1, width))?,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        g.layer_norm(x, p[self.gamma.0], p[self.beta.0])
    }

    pub fn eval(&self, params: &ParameterSet, x: &Tensor) -> Tensor {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let gamma = g.constant(params.value(self.gamma).clone());
        let beta = g.constant(params.value(self.beta).clone());
        let y = g
            .layer_norm(xv, gamma, beta)
            .expect("layer norm shapes fixed at init");
        g.value(y).clone()
    }
}

/// Maps features to Gaussian `(mu, sigma)` with `sigma = softplus(.) + floor`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianHead {
    pub mu: Dense,
    pub sigma: Dense,
}

/// Per-element Gaussian parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub mu: Tensor,
    pub sigma: Tensor,
}

impl GaussianHead {
    pub fn init<R: Rng>(
        params: &mut ParameterSet,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            mu: Dense::init(params, &format!("{name}.mu"), inputs, outputs, Activation::Identity, rng)?,
            sigma: Dense::init(params, &format!("{name}.sigma"), inputs, outputs, Activation::Softplus, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<(Var, Var)> {
        let mu = self.mu.forward(g, p, x)?;
        let s = self.sigma.forward(g, p, x)?;
        Ok((mu, g.offset(s, SIGMA_FLOOR)))
    }

    pub fn eval(&self, params: &ParameterSet, x: &Tensor) -> Result<GaussianParams> {
        let mu = self.mu.eval(params, x)?;
        let raw = x
            .matmul(params.value(self.sigma.w))?
            .add_row(params.value(self.sigma.b))?;
        let sigma = raw.map(|v| softplus(v) + SIGMA_FLOOR);
        Ok(GaussianParams { mu, sigma })
    }
}
