use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamSet};
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f32>,
}

impl AdamWConfig {
    pub fn with_lr(lr: f32) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01, clip_norm: Some(1.0) }
    }
}

/// AdamW with decoupled weight decay.
pub struct AdamW {
    cfg: AdamWConfig,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: i32,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, params: &ParamSet) -> Self {
        let m = params.iter().map(|(_, _, t)| vec![0.0; t.data.len()]).collect::<Vec<_>>();
        Self { cfg, v: m.clone(), m, t: 0 }
    }

    pub fn set_lr(&mut self, lr: f32) {
        self.cfg.lr = lr;
    }

    /// Applies one update. Returns the pre-clip global gradient norm.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Option<Tensor>]) -> f32 {
        let sq: f64 =
            grads.iter().flatten().map(|g| g.data.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>()).sum();
        let gnorm = sq.sqrt() as f32;
        let clip = match self.cfg.clip_norm {
            Some(c) if gnorm > c => c / gnorm,
            _ => 1.0,
        };
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for (i, g) in grads.iter().enumerate() {
            let id = ParamId(i);
            let decay = if params.decays(id) { c.weight_decay } else { 0.0 };
            let p = params.get_mut(id);
            if decay > 0.0 {
                let f = 1.0 - c.lr * decay;
                p.data.iter_mut().for_each(|w| *w *= f);
            }
            let Some(g) = g else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.data.len() {
                let gj = g.data[j] * clip;
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                p.data[j] -= c.lr * mh / (vh.sqrt() + c.eps);
            }
        }
        gnorm
    }
}
