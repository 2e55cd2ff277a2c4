use ndarray::Zip;

use crate::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled: applied to the weights directly, not through the moments.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, Copy)]
pub struct Adam {
    pub cfg: AdamConfig,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        assert!(cfg.beta1 > 0.0 && cfg.beta1 < 1.0 && cfg.beta2 > 0.0 && cfg.beta2 < 1.0);
        Self { cfg }
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&self, params: &mut ModelParams) {
        let t = params.bump_step() as i32;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        params.for_each_slot(|w, g, m, v| {
            Zip::from(w).and(&mut *g).and(m).and(v).for_each(|w, g, m, v| {
                *w -= lr * weight_decay * *w;
                *m = beta1 * *m + (1.0 - beta1) * *g;
                *v = beta2 * *v + (1.0 - beta2) * *g * *g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
                *g = 0.0;
            });
        });
    }
}
