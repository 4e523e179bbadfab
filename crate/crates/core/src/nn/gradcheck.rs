use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParameterSet};
use crate::error::{Error, Result};

/// Gradients below this magnitude are compared absolutely.
const DENOM_FLOOR: f64 = 1e-6;

fn eval_loss<F>(params: &ParameterSet, loss_fn: &F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let p = g.params(params);
    let loss = loss_fn(&mut g, &p)?;
    let v = g.scalar(loss);
    if !v.is_finite() {
        return Err(Error::InvalidArgument(format!("non-finite loss {v}")));
    }
    Ok(v)
}

/// Compares tape gradients with central differences on `probe_count`
/// coordinates drawn uniformly over all parameter scalars. Returns the worst
/// relative error `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn grad_check<F>(
    params: &ParameterSet,
    loss_fn: F,
    probe_count: usize,
    epsilon: f64,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(1e-6..=1e-3).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!(
            "epsilon {epsilon} outside [1e-6, 1e-3]"
        )));
    }
    let mut analytic = params.clone();
    analytic.zero_grads();
    {
        let mut g = Graph::new();
        let p = g.params(&analytic);
        let loss = loss_fn(&mut g, &p)?;
        let v = g.backward(loss, &mut analytic)?;
        if !v.is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite loss {v}")));
        }
    }

    let coords: Vec<(ParamId, usize)> = params
        .ids()
        .flat_map(|id| (0..params.value(id).len()).map(move |j| (id, j)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for _ in 0..probe_count {
        let (id, j) = coords[rng.random_range(0..coords.len())];
        let orig = params.value(id).data()[j];
        probe.value_mut(id).data_mut()[j] = orig + epsilon;
        let up = eval_loss(&probe, &loss_fn)?;
        probe.value_mut(id).data_mut()[j] = orig - epsilon;
        let down = eval_loss(&probe, &loss_fn)?;
        probe.value_mut(id).data_mut()[j] = orig;

        let numeric = (up - down) / (2.0 * epsilon);
        let a = analytic.grad(id).data()[j];
        let denom = a.abs().max(numeric.abs()).max(DENOM_FLOOR);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
