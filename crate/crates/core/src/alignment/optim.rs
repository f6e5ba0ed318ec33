use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

/// Adam with decoupled weight decay. Decay applies to matrices only
/// (tensors with more than one row); biases and norm scales are exempt.
#[derive(Debug, Clone)]
pub struct AdamW {
    cfg: AdamWConfig,
    step: u64,
    m: Vec<Array2<f32>>,
    v: Vec<Array2<f32>>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, params: &ParamSet<f32>) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|p| Array2::zeros(p.value.dim()))
                .collect()
        };
        Self {
            cfg,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies one update. `grads` aligns with the parameter order; a
    /// gradient supplied for a frozen tensor is refused.
    pub fn step(
        &mut self,
        params: &mut ParamSet<f32>,
        grads: &[Option<Array2<f32>>],
        lr: f64,
    ) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "{} grads for {} params",
                grads.len(),
                params.len()
            )));
        }
        self.step += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            if p.frozen {
                return Err(Error::Frozen(p.name.clone()));
            }
            let decay = if p.value.nrows() > 1 {
                c.weight_decay
            } else {
                0.0
            };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            ndarray::Zip::from(&mut p.value)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|w, m, v, &g| {
                    let g = f64::from(g);
                    let mn = c.beta1 * f64::from(*m) + (1.0 - c.beta1) * g;
                    let vn = c.beta2 * f64::from(*v) + (1.0 - c.beta2) * g * g;
                    *m = mn as f32;
                    *v = vn as f32;
                    let update = (mn / bc1) / ((vn / bc2).sqrt() + c.eps);
                    let wf = f64::from(*w);
                    *w = (wf - lr * decay * wf - lr * update) as f32;
                });
        }
        Ok(())
    }
}

/// Cosine decay from `base_lr` to zero over `total_steps`.
pub fn cosine_lr(base_lr: f64, step: usize, total_steps: usize) -> f64 {
    if total_steps == 0 {
        return base_lr;
    }
    let progress = (step as f64 / total_steps as f64).min(1.0);
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}
