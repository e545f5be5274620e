use crate::error::{Error, Result};

/// ADAM hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
}

impl AdamState {
    pub fn new(num_params: usize, config: AdamConfig) -> Self {
        Self {
            config,
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second_moment
    }

    /// One bias-corrected ADAM update that *descends* `grads`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(Error::Optimizer {
                params: params.len(),
                grads: grads.len(),
                moments: self.first_moment.len(),
            });
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_is_noop() {
        let mut params = vec![0.3, -1.2, 5.0];
        let before = params.clone();
        let mut state = AdamState::new(3, AdamConfig::default());
        state.step(&mut params, &[0.0; 3]).unwrap();
        assert_eq!(params, before);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn single_scalar_step() {
        // m_hat = 1, v_hat = 1 after bias correction, so the step is lr / (1 + eps).
        let mut params = vec![0.0];
        let mut state = AdamState::new(1, AdamConfig::default());
        state.step(&mut params, &[1.0]).unwrap();
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((params[0] - expected).abs() < 1e-15, "{}", params[0]);
    }

    #[test]
    fn two_steps_reduce_quadratic() {
        // loss = sum (p - c)^2
        let target = [1.0, -2.0];
        let loss = |p: &[f64]| p.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let mut params = vec![0.0, 0.0];
        let mut state = AdamState::new(2, AdamConfig { lr: 0.1, ..AdamConfig::default() });
        let mut prev = loss(&params);
        for _ in 0..2 {
            let g: Vec<f64> = params.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
            state.step(&mut params, &g).unwrap();
            let now = loss(&params);
            assert!(now < prev);
            prev = now;
        }
        assert_eq!(state.step_count(), 2);
    }

    #[test]
    fn shape_mismatch() {
        let mut state = AdamState::new(2, AdamConfig::default());
        let mut params = vec![0.0; 2];
        assert!(matches!(state.step(&mut params, &[1.0]), Err(Error::Optimizer { .. })));
        let mut params = vec![0.0; 3];
        assert!(state.step(&mut params, &[1.0; 3]).is_err());
        assert_eq!(state.step_count(), 0);
    }
}
