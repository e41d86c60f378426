// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl AdamConfig {
    pub fn with_lr(lr: f32) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are created lazily (zeros) on the
/// first step and are tied to the parameter order passed to [`Adam::step`].
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. A `None` gradient is treated as zero for that
    /// parameter (its moments still decay). Nothing is modified if any
    /// gradient is non-finite.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Option<&Tensor>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::invalid(
                "adam_step",
                format!("{} params but {} gradients", params.len(), grads.len()),
            ));
        }
        for (p, g) in params.iter().zip(grads) {
            if let Some(g) = g {
                if g.len() != p.len() {
                    return Err(Error::Shape {
                        op: "adam_step",
                        lhs: p.shape().to_vec(),
                        rhs: g.shape().to_vec(),
                    });
                }
                if !g.is_finite() {
                    return Err(Error::NonFinite("gradient".into()));
                }
            }
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second = params.iter().map(|p| vec![0.0; p.len()]).collect();
        } else if self.first.len() != params.len() {
            return Err(Error::invalid("adam_step", "parameter list changed between steps"));
        }

        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            let data = p.data_mut();
            match g {
                Some(g) => {
                    for (((w, &gi), mi), vi) in data.iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi = beta1 * *mi + (1.0 - beta1) * gi;
                        *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                        let m_hat = *mi / c1;
                        let v_hat = *vi / c2;
                        *w -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
                None => {
                    for ((w, mi), vi) in data.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi *= beta1;
                        *vi *= beta2;
                        let m_hat = *mi / c1;
                        let v_hat = *vi / c2;
                        *w -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
