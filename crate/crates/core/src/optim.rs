//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::params::ParamSet;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl AdamState {
    pub fn new(params: &ParamSet, learning_rate: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            learning_rate,
        }
    }

    /// One update. `grads` is aligned with the parameter order of `params`.
    pub fn update(&mut self, params: &mut ParamSet, grads: &[Option<Vec<f64>>]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer tracks {} parameters, got {} gradients for {} parameters",
                self.m.len(),
                grads.len(),
                params.len()
            )));
        }
        for (id, grad) in params.ids().zip(grads) {
            if grad.is_none() {
                return Err(Error::MissingGradient(params.name(id).to_string()));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.epsilon, self.learning_rate);

        for (((param, grad), m), v) in params
            .values_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let grad = grad.as_ref().expect("checked above");
            for (((p, &g), m), v) in param
                .data_mut()
                .iter_mut()
                .zip(grad)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn single(w: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::scalar(w));
        p
    }

    fn minimize(start: f64, target: f64, lr: f64, steps: usize) -> f64 {
        let mut params = single(start);
        let mut adam = AdamState::new(&params, lr);
        for _ in 0..steps {
            let w = params.iter().next().unwrap().1.item();
            adam.update(&mut params, &[Some(vec![2.0 * (w - target)])])
                .unwrap();
        }
        let w = params.iter().next().unwrap().1.item();
        w
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut params = single(1.5);
        let mut adam = AdamState::new(&params, 0.1);
        adam.update(&mut params, &[Some(vec![0.0])]).unwrap();
        assert_eq!(params.iter().next().unwrap().1.item(), 1.5);
        assert_eq!(adam.m, vec![vec![0.0]]);
        assert_eq!(adam.v, vec![vec![0.0]]);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut params = single(0.0);
        let mut adam = AdamState::new(&params, 0.1);
        adam.update(&mut params, &[Some(vec![1.0])]).unwrap();
        // m_hat = 1, v_hat = 1 => delta = lr / (1 + eps)
        let w = params.iter().next().unwrap().1.item();
        assert!((w + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn converges_on_quadratics() {
        assert!(minimize(1.0, 0.0, 0.1, 100).abs() < 0.1);
        assert!((minimize(0.0, 3.0, 0.05, 500) - 3.0).abs() < 0.05);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut params = single(1.0);
        let mut adam = AdamState::new(&params, 0.1);
        let err = adam.update(&mut params, &[None]).unwrap_err();
        assert!(matches!(err, Error::MissingGradient(ref n) if n == "w"));
        assert_eq!(adam.step, 0);
    }
}
