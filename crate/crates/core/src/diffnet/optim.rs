use serde::{Deserialize, Serialize};

use super::{Gradients, Parameter, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moments for every parameter, kept in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new<S: Real>(config: AdamConfig, params: &[Parameter<S>]) -> Self {
        OptimizerState {
            config,
            step: 0,
            first: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
        }
    }

    /// One bias-corrected Adam update.
    pub fn step<S: Real>(&mut self, params: &mut [Parameter<S>], grads: &Gradients<S>) {
        assert_eq!(params.len(), grads.0.len(), "gradient/parameter count");
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(&grads.0)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            assert_eq!(p.value.len(), g.len(), "gradient shape for {}", p.name);
            for (((w, &gi), mi), vi) in p.value.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi.as_f64();
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let update = learning_rate * (*mi / c1) / ((*vi / c2).sqrt() + epsilon);
                *w = S::of(w.as_f64() - update);
            }
        }
    }
}
