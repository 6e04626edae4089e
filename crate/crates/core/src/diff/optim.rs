use serde::{Deserialize, Serialize};

use super::{DiffError, ParamGrads, ParamRegistry, Scalar, Tensor};

pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: DEFAULT_WEIGHT_DECAY }
    }
}

/// Adam with decoupled weight decay. Moments are kept in f64.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW { config, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. Parameters without a gradient still receive weight decay.
    pub fn step<T: Scalar>(&mut self, reg: &mut ParamRegistry<T>, grads: &ParamGrads<T>) -> Result<(), DiffError> {
        let AdamWConfig { lr, beta1, beta2, eps, weight_decay } = self.config;
        if self.m.len() != reg.len() {
            self.m = reg.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
            self.v = self.m.clone();
        }
        for id in reg.ids() {
            if let Some(g) = grads.get(id) {
                if g.shape() != reg.value(id).shape() {
                    return Err(DiffError::Shape(format!(
                        "gradient {:?} for `{}` {:?}",
                        g.shape(),
                        reg.get(id).name,
                        reg.value(id).shape()
                    )));
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for id in reg.ids() {
            let grad: Option<&Tensor<T>> = grads.get(id);
            let param = reg.get_mut(id);
            let decay = if param.decay { weight_decay } else { 0.0 };
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            for (k, p) in param.value.data_mut().iter_mut().enumerate() {
                let mut x = p.to_f64c();
                x -= lr * decay * x;
                let g = grad.map_or(0.0, |g| g.data()[k].to_f64c());
                m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                x -= lr * mhat / (vhat.sqrt() + eps);
                *p = T::of(x);
            }
        }
        Ok(())
    }
}
