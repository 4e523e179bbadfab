//! Reverse-mode differentiation over a recorded operation tape.
//!
//! Nodes are appended in evaluation order, so a single reverse sweep over the
//! tape visits every node after all of its consumers.

use super::params::{ParamId, ParameterSet};
use super::tensor::Tensor;
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    Sigmoid,
    Softplus,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Softplus => softplus(x),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Softplus => sigmoid(x),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Act(Var, Activation),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Tensor,
        inv_std: Vec<f64>,
    },
    GaussianNll {
        mu: Var,
        sigma: Var,
        target: Tensor,
    },
    SquaredError {
        pred: Var,
        target: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// One forward pass worth of recorded operations.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    /// Non-trainable input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Trainable leaf whose gradient flows back to `params[id]`.
    pub fn param(&mut self, params: &ParameterSet, id: ParamId) -> Var {
        self.push(params.value(id).clone(), Op::Param(id))
    }

    /// Leaves for every parameter, indexed by `ParamId`.
    pub fn params(&mut self, params: &ParameterSet) -> Vec<Var> {
        params.ids().map(|id| self.param(params, id)).collect()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.push(v, Op::MatMulNt(a, b)))
    }

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (x, y) = (self.value(a), self.value(b));
        if x.same_shape(y) {
            Ok(())
        } else {
            Err(Error::shape(
                op,
                format!("[{}, {}] vs [{}, {}]", x.rows(), x.cols(), y.rows(), y.cols()),
            ))
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// Broadcast-adds a `[1, n]` row.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let v = self.value(a).add_row(self.value(row))?;
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::Offset(a))
    }

    pub fn act(&mut self, a: Var, f: Activation) -> Var {
        if f == Activation::Identity {
            return a;
        }
        let v = self.value(a).map(|x| f.apply(x));
        self.push(v, Op::Act(a, f))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if start + len > t.cols() || len == 0 {
            return Err(Error::shape(
                "slice_cols",
                format!("{start}..{} of {} columns", start + len, t.cols()),
            ));
        }
        let v = t.slice_cols(start, len);
        Ok(self.push(v, Op::SliceCols(a, start)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let ts: Vec<&Tensor> = parts.iter().map(|p| self.value(*p)).collect();
        let v = Tensor::concat_rows(&ts)?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let ts: Vec<&Tensor> = parts.iter().map(|p| self.value(*p)).collect();
        let v = Tensor::concat_cols(&ts)?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    /// Row-wise softmax; `causal` zeroes entries above the diagonal.
    pub fn softmax_rows(&mut self, a: Var, causal: bool) -> Var {
        let v = self.value(a).softmax_rows(causal);
        self.push(v, Op::Softmax(a))
    }

    /// Per-row normalization followed by a `[1, n]` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = (t.rows(), t.cols());
        let (g, b) = (self.value(gamma), self.value(beta));
        if g.rows() != 1 || g.cols() != n || !g.same_shape(b) {
            return Err(Error::shape("layer_norm", "gain/bias must be [1, n]"));
        }
        let mut normalized = Vec::with_capacity(m * n);
        let mut inv_std = Vec::with_capacity(m);
        for i in 0..m {
            let row = t.row(i);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            normalized.extend(row.iter().map(|v| (v - mean) * is));
        }
        let normalized = Tensor::from_rows(m, n, normalized);
        let mut out = normalized.clone();
        for chunk in out.data_mut().chunks_mut(n) {
            for ((o, gv), bv) in chunk.iter_mut().zip(g.data()).zip(b.data()) {
                *o = *o * gv + bv;
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
        ))
    }

    /// Mean Gaussian negative log-likelihood of `target` as a `[1, 1]` node.
    pub fn gaussian_nll(&mut self, mu: Var, sigma: Var, target: Tensor) -> Result<Var> {
        self.check_same("gaussian_nll", mu, sigma)?;
        let (m, s) = (self.value(mu), self.value(sigma));
        if !m.same_shape(&target) {
            return Err(Error::shape("gaussian_nll", "target shape differs from mu"));
        }
        if s.data().iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidArgument("sigma must be strictly positive".into()));
        }
        let v = gaussian_nll_value(m.data(), s.data(), target.data());
        Ok(self.push(Tensor::scalar(v), Op::GaussianNll { mu, sigma, target }))
    }

    /// Mean squared error against `target` as a `[1, 1]` node.
    pub fn squared_error(&mut self, pred: Var, target: Tensor) -> Result<Var> {
        let p = self.value(pred);
        if !p.same_shape(&target) {
            return Err(Error::shape("squared_error", "target shape differs"));
        }
        let n = p.len() as f64;
        let v = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        Ok(self.push(Tensor::scalar(v), Op::SquaredError { pred, target }))
    }

    /// Back-propagates from scalar `loss` and adds parameter gradients into
    /// `params`. Returns the loss value.
    pub fn backward(&self, loss: Var, params: &mut ParameterSet) -> Result<f64> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::shape("backward", "loss must be a scalar"));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => params.grad_mut(*id).add_assign(&g),
                Op::MatMul(a, b) => {
                    let ga = g.matmul_nt(self.value(*b))?;
                    let gb = self.value(*a).matmul_tn(&g)?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulNt(a, b) => {
                    // y = a bᵀ: da = g b, db = gᵀ a
                    let ga = g.matmul(self.value(*b))?;
                    let gb = g.matmul_tn(self.value(*a))?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.map(|v| -v));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y);
                    let gb = g.zip_map(self.value(*a), |x, y| x * y);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRow(a, row) => {
                    accumulate(&mut grads, *row, g.sum_rows());
                    accumulate(&mut grads, *a, g);
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    accumulate(&mut grads, *a, g.map(|v| v * c));
                }
                Op::Offset(a) => accumulate(&mut grads, *a, g),
                Op::Act(a, f) => {
                    let x = self.value(*a);
                    let y = &node.value;
                    let mut ga = g;
                    for ((gv, xv), yv) in ga.data_mut().iter_mut().zip(x.data()).zip(y.data()) {
                        *gv *= f.derivative(*xv, *yv);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let src = self.value(*a);
                    let (m, n, len) = (src.rows(), src.cols(), g.cols());
                    let mut ga = Tensor::zeros(m, n);
                    for i in 0..m {
                        ga.data_mut()[i * n + start..i * n + start + len]
                            .copy_from_slice(g.row(i));
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatRows(parts) => {
                    let n = g.cols();
                    let mut offset = 0;
                    for p in parts {
                        let rows = self.value(*p).rows();
                        let data = g.data()[offset * n..(offset + rows) * n].to_vec();
                        offset += rows;
                        accumulate(&mut grads, *p, Tensor::from_rows(rows, n, data));
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let cols = self.value(*p).cols();
                        accumulate(&mut grads, *p, g.slice_cols(start, cols));
                        start += cols;
                    }
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let n = y.cols();
                    let mut ga = Tensor::zeros(y.rows(), n);
                    for i in 0..y.rows() {
                        let (yr, gr) = (y.row(i), g.row(i));
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            ga.data_mut()[i * n + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    normalized,
                    inv_std,
                } => {
                    let n = normalized.cols();
                    let gam = self.value(*gamma);
                    let mut gx = Tensor::zeros(normalized.rows(), n);
                    let mut ggamma = vec![0.0; n];
                    for i in 0..normalized.rows() {
                        let (xh, gr) = (normalized.row(i), g.row(i));
                        let dxh: Vec<f64> =
                            gr.iter().zip(gam.data()).map(|(a, b)| a * b).collect();
                        let mean_dxh = dxh.iter().sum::<f64>() / n as f64;
                        let mean_dxh_xh =
                            dxh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for j in 0..n {
                            gx.data_mut()[i * n + j] =
                                inv_std[i] * (dxh[j] - mean_dxh - xh[j] * mean_dxh_xh);
                            ggamma[j] += gr[j] * xh[j];
                        }
                    }
                    accumulate(&mut grads, *beta, g.sum_rows());
                    accumulate(&mut grads, *gamma, Tensor::row_vector(ggamma));
                    accumulate(&mut grads, *x, gx);
                }
                Op::GaussianNll { mu, sigma, target } => {
                    let up = g.data()[0] / target.len() as f64;
                    let (m, s) = (self.value(*mu), self.value(*sigma));
                    let mut gm = m.clone();
                    let mut gs = s.clone();
                    for i in 0..target.len() {
                        let (mv, sv, xv) = (m.data()[i], s.data()[i], target.data()[i]);
                        let d = xv - mv;
                        gm.data_mut()[i] = up * (mv - xv) / (sv * sv);
                        gs.data_mut()[i] = up * (1.0 / sv - d * d / (sv * sv * sv));
                    }
                    accumulate(&mut grads, *mu, gm);
                    accumulate(&mut grads, *sigma, gs);
                }
                Op::SquaredError { pred, target } => {
                    let up = g.data()[0] * 2.0 / target.len() as f64;
                    let gp = self.value(*pred).zip_map(target, |p, t| up * (p - t));
                    accumulate(&mut grads, *pred, gp);
                }
            }
        }
        Ok(lv.data()[0])
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Mean of `½ ln(2πσ²) + (x − μ)² / (2σ²)` over all elements.
pub fn gaussian_nll_value(mu: &[f64], sigma: &[f64], target: &[f64]) -> f64 {
    let n = target.len() as f64;
    mu.iter()
        .zip(sigma)
        .zip(target)
        .map(|((m, s), x)| {
            let d = x - m;
            0.5 * LN_2PI + s.ln() + d * d / (2.0 * s * s)
        })
        .sum::<f64>()
        / n
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nll_closed_forms() {
        assert!((gaussian_nll_value(&[1.5], &[1.0], &[1.5]) - 0.918_938_533_204_672_7).abs() < 1e-12);
        assert!((gaussian_nll_value(&[0.0], &[1.0], &[1.0]) - 1.418_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn nll_gradient_wrt_mu() {
        let mut params = ParameterSet::new();
        let mu = params.insert("mu", Tensor::scalar(0.0)).unwrap();
        let sigma = params.insert("sigma", Tensor::scalar(1.0)).unwrap();
        let mut g = Graph::new();
        let vars = g.params(&params);
        let loss = g.gaussian_nll(vars[0], vars[1], Tensor::scalar(1.0)).unwrap();
        g.backward(loss, &mut params).unwrap();
        let analytic = params.grad(mu).data()[0];
        assert_eq!(analytic, -1.0);

        let h = 1e-6;
        let fd = (gaussian_nll_value(&[h], &[1.0], &[1.0])
            - gaussian_nll_value(&[-h], &[1.0], &[1.0]))
            / (2.0 * h);
        assert!((fd - analytic).abs() < 1e-6);
        // d/dσ at σ=1, d=1: 1 - 1 = 0
        assert!(params.grad(sigma).data()[0].abs() < 1e-15);
    }

    #[test]
    fn nll_minimized_at_target() {
        let grad_at = |m: f64| {
            let mut params = ParameterSet::new();
            params.insert("mu", Tensor::scalar(m)).unwrap();
            params.insert("sigma", Tensor::scalar(0.7)).unwrap();
            let mut g = Graph::new();
            let v = g.params(&params);
            let loss = g.gaussian_nll(v[0], v[1], Tensor::scalar(2.0)).unwrap();
            g.backward(loss, &mut params).unwrap();
            params.grad(ParamId(0)).data()[0]
        };
        assert!(grad_at(1.99) < 0.0);
        assert!(grad_at(2.01) > 0.0);
        assert_eq!(grad_at(2.0), 0.0);
    }

    #[test]
    fn nll_rejects_non_positive_sigma() {
        let mut g = Graph::new();
        let mu = g.constant(Tensor::scalar(0.0));
        let s = g.constant(Tensor::scalar(0.0));
        assert!(g.gaussian_nll(mu, s, Tensor::scalar(0.0)).is_err());
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!(softplus(-1000.0).is_finite());
    }
}
