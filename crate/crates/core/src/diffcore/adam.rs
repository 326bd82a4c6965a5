use serde::{Deserialize, Serialize};

use super::{DiffError, ParameterSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

/// Adam with bias correction. Moments are laid out in parameter order.
#[derive(Debug, Clone)]
pub struct AdamState {
    config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParameterSet) -> Result<Self, DiffError> {
        if !config.learning_rate.is_finite() || config.learning_rate <= 0.0 {
            return Err(DiffError::InvalidLearningRate(config.learning_rate));
        }
        let first = params
            .iter()
            .map(|p| Tensor::zeros(p.value.shape()))
            .collect();
        let second = params
            .iter()
            .map(|p| Tensor::zeros(p.value.shape()))
            .collect();
        Ok(Self {
            config,
            first,
            second,
            step: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn first_moment(&self, index: usize) -> &Tensor {
        &self.first[index]
    }

    pub fn second_moment(&self, index: usize) -> &Tensor {
        &self.second[index]
    }

    /// One update from the gradients currently stored in `params`.
    pub fn step(&mut self, params: &mut ParameterSet) {
        assert_eq!(
            params.len(),
            self.first.len(),
            "parameter set changed shape"
        );
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        for ((param, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            if param.frozen {
                continue;
            }
            let grads = param.grad.values();
            let values = param.value.values_mut();
            for (((w, g), mi), vi) in values
                .iter_mut()
                .zip(grads)
                .zip(m.values_mut())
                .zip(v.values_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                *w -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
    }
}
