use super::params::ParameterSet;
use super::tensor::Tensor;

/// Adam optimizer state with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    t: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParameterSet, learning_rate: f64) -> Self {
        let zeros: Vec<Tensor> = params
            .ids()
            .map(|id| params.value(id).map(|_| 0.0))
            .collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update from the gradients currently stored in `params`.
    pub fn step(&mut self, params: &mut ParameterSet) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let grad = params.grad(id).data().to_vec();
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let value = params.value_mut(id).data_mut();
            for j in 0..grad.len() {
                let g = grad[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                value[j] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(w: f64) -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert("w", Tensor::scalar(w)).unwrap();
        p
    }

    #[test]
    fn zero_gradient_is_noop() {
        let mut p = scalar_param(0.37);
        let before = p.clone();
        let mut adam = AdamState::new(&p, 1e-3);
        for _ in 0..5 {
            adam.step(&mut p);
        }
        assert_eq!(p, before);
        assert_eq!(adam.steps(), 5);
    }

    #[test]
    fn first_step_is_learning_rate() {
        let mut p = scalar_param(1.0);
        let id = p.id("w").unwrap();
        p.grad_mut(id).data_mut()[0] = 1.0;
        let mut adam = AdamState::new(&p, 0.1);
        adam.step(&mut p);
        // m_hat = v_hat = 1 after bias correction
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((p.value(id).data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn minimizes_square() {
        let mut p = scalar_param(1.0);
        let id = p.id("w").unwrap();
        let mut adam = AdamState::new(&p, 0.05);
        let mut reached = None;
        for step in 1..=200 {
            let w = p.value(id).data()[0];
            p.grad_mut(id).data_mut()[0] = 2.0 * w;
            adam.step(&mut p);
            if p.value(id).data()[0].abs() < 0.05 {
                reached = Some(step);
                break;
            }
        }
        assert!(reached.is_some(), "w = {}", p.value(id).data()[0]);
    }
}
