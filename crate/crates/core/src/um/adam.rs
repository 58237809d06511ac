use serde::{Deserialize, Serialize};

use super::mlp::Layer;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update; `step` is the 1-based step number.
pub fn adam_update(params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], step: u64, cfg: &AdamConfig) {
    let c1 = 1.0 - cfg.beta1.powi(step as i32);
    let c2 = 1.0 - cfg.beta2.powi(step as i32);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Moment estimates shaped like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub config: AdamConfig,
    m: Vec<Layer>,
    v: Vec<Layer>,
}

fn zeros_like(layers: &[Layer]) -> Vec<Layer> {
    layers
        .iter()
        .map(|l| Layer { weights: l.weights.mapv(|_| 0.0), biases: l.biases.mapv(|_| 0.0) })
        .collect()
}

fn slice(a: &ndarray::Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

impl AdamState {
    pub fn new(layers: &[Layer], config: AdamConfig) -> Self {
        Self { step: 0, config, m: zeros_like(layers), v: zeros_like(layers) }
    }

    pub fn apply(&mut self, layers: &mut [Layer], grads: &[Layer]) {
        self.step += 1;
        let step = self.step;
        let cfg = self.config;
        for (((layer, g), m), v) in layers.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            adam_update(
                layer.weights.as_slice_mut().expect("standard layout"),
                slice(&g.weights),
                m.weights.as_slice_mut().expect("standard layout"),
                v.weights.as_slice_mut().expect("standard layout"),
                step,
                &cfg,
            );
            adam_update(
                layer.biases.as_slice_mut().expect("contiguous"),
                g.biases.as_slice().expect("contiguous"),
                m.biases.as_slice_mut().expect("contiguous"),
                v.biases.as_slice_mut().expect("contiguous"),
                step,
                &cfg,
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamConfig::default();
        for g in [0.5, 3.0, 1e-3] {
            let mut p = [1.0];
            let (mut m, mut v) = ([0.0], [0.0]);
            adam_update(&mut p, &[g], &mut m, &mut v, 1, &cfg);
            assert!((p[0] - (1.0 - cfg.lr)).abs() < 1e-7, "{g}: {}", p[0]);
        }
    }

    #[test]
    fn constant_gradient_keeps_unit_steps() {
        let cfg = AdamConfig::default();
        let mut p = [0.0];
        let (mut m, mut v) = ([0.0], [0.0]);
        for step in 1..=50 {
            adam_update(&mut p, &[2.0], &mut m, &mut v, step, &cfg);
        }
        assert!((p[0] + 50.0 * cfg.lr).abs() < 1e-6);
    }
}
