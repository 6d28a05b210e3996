//! AdamW with decoupled weight decay and a warmup + cosine schedule.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::nn::ParamStore;

/// Linear warmup from 0 to `peak`, then cosine decay to 0 at `total_steps`.
/// A pure function of the step count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl LrSchedule {
    pub fn at(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            return self.peak * step as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps);
        if span == 0 {
            return self.peak;
        }
        let progress = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        0.5 * self.peak * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
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
            weight_decay: 0.001,
        }
    }
}

/// Moment buffers for every tensor of the stores it steps, in order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub schedule: LrSchedule,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, schedule: LrSchedule, stores: &[&ParamStore]) -> Self {
        let zeros: Vec<Vec<f64>> = stores
            .iter()
            .flat_map(|s| s.iter().map(|(_, t)| vec![0.0; t.numel()]))
            .collect();
        Self {
            config,
            schedule,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn current_lr(&self) -> f64 {
        self.schedule.at(self.step)
    }

    /// Applies one update from the stored gradients, then clears them.
    /// Tensors without a gradient buffer are skipped (their moments idle).
    pub fn update(&mut self, stores: &mut [&mut ParamStore]) -> Result<()> {
        let lr = self.current_lr();
        self.step += 1;
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let mut slot = 0;
        for store in stores.iter_mut() {
            for t in store.tensors_mut() {
                ensure!(slot < self.m.len(), Contract, "optimizer built for fewer tensors");
                ensure!(
                    self.m[slot].len() == t.numel(),
                    Contract,
                    "optimizer slot {slot} has {} entries, tensor has {}",
                    self.m[slot].len(),
                    t.numel()
                );
                if let Some(g) = t.grad.take() {
                    let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
                    for (((w, &gi), mi), vi) in t.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi = beta1 * *mi + (1.0 - beta1) * gi;
                        *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                        let update = (*mi / bc1) / ((*vi / bc2).sqrt() + eps);
                        // With lr = 0 this subtracts exactly zero.
                        *w -= lr * (update + weight_decay * *w);
                    }
                }
                slot += 1;
            }
        }
        ensure!(slot == self.m.len(), Contract, "optimizer built for more tensors");
        Ok(())
    }
}
