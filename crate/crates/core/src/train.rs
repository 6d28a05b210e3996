//! Mini-batch training loop shared by the planner, executor and projector.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::executor::AutoregressiveLM;
use crate::nn::{Bound, ParamStore, Transformer};
use crate::optim::{AdamW, AdamWConfig, LrSchedule};
use crate::planner::DiffusionLM;
use crate::rng::{sub_rng, Rng};
use crate::tensor::{Precision, Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_accum: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    pub precision: Precision,
    pub seed: u64,
    pub lora_enabled: bool,
    pub lora_rank: usize,
    pub lora_alpha: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 4,
            grad_accum: 2,
            lr: 5e-4,
            weight_decay: 0.001,
            warmup_steps: 300,
            precision: Precision::F32,
            seed: 0,
            lora_enabled: false,
            lora_rank: 8,
            lora_alpha: 32.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.epochs > 0, Config, "epochs must be positive");
        ensure!(self.batch_size > 0 && self.grad_accum > 0, Config, "batch size and accumulation must be positive");
        ensure!(self.lr >= 0.0 && self.lr.is_finite(), Config, "learning rate {} is invalid", self.lr);
        ensure!(self.weight_decay >= 0.0, Config, "weight decay must be non-negative");
        Ok(())
    }

    pub fn effective_batch(&self) -> usize {
        self.batch_size * self.grad_accum
    }

    pub fn steps_per_epoch(&self, n: usize) -> u64 {
        n.div_ceil(self.effective_batch()) as u64
    }

    pub fn schedule(&self, n: usize) -> LrSchedule {
        LrSchedule {
            peak: self.lr,
            warmup_steps: self.warmup_steps,
            total_steps: self.steps_per_epoch(n) * self.epochs as u64,
        }
    }

    pub fn optimizer(&self, n: usize, stores: &[&ParamStore]) -> AdamW {
        let config = AdamWConfig {
            weight_decay: self.weight_decay,
            ..Default::default()
        };
        AdamW::new(config, self.schedule(n), stores)
    }
}

/// Anything the loop can bind, differentiate and update.
pub trait Trainable {
    type Bound;
    fn bind(&self, tape: &mut Tape) -> Self::Bound;
    fn accumulate(&mut self, tape: &Tape, bound: &Self::Bound);
    fn stores(&self) -> Vec<&ParamStore>;
    fn stores_mut(&mut self) -> Vec<&mut ParamStore>;
}

impl Trainable for Transformer {
    type Bound = Bound;

    fn bind(&self, tape: &mut Tape) -> Bound {
        Transformer::bind(self, tape)
    }

    fn accumulate(&mut self, tape: &Tape, bound: &Bound) {
        Transformer::accumulate(self, tape, bound)
    }

    fn stores(&self) -> Vec<&ParamStore> {
        let mut v = vec![&self.params];
        v.extend(self.lora.as_ref().map(|a| &a.params));
        v
    }

    fn stores_mut(&mut self) -> Vec<&mut ParamStore> {
        let mut v = vec![&mut self.params];
        v.extend(self.lora.as_mut().map(|a| &mut a.params));
        v
    }
}

macro_rules! delegate_to_net {
    ($t:ty) => {
        impl Trainable for $t {
            type Bound = Bound;

            fn bind(&self, tape: &mut Tape) -> Bound {
                self.net.bind(tape)
            }

            fn accumulate(&mut self, tape: &Tape, bound: &Bound) {
                self.net.accumulate(tape, bound)
            }

            fn stores(&self) -> Vec<&ParamStore> {
                self.net.stores()
            }

            fn stores_mut(&mut self) -> Vec<&mut ParamStore> {
                self.net.stores_mut()
            }
        }
    };
}

delegate_to_net!(DiffusionLM);
delegate_to_net!(AutoregressiveLM);

/// Resumable loop state: optimizer plus the loss curve so far.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub opt: AdamW,
    /// Mean per-sample loss of every finished epoch.
    pub epoch_losses: Vec<f64>,
    /// Loss sum and sample count of the epoch in progress.
    pub partial: (f64, usize),
}

impl TrainState {
    pub fn new<M: Trainable>(model: &M, cfg: &TrainConfig, n: usize) -> Self {
        Self {
            opt: cfg.optimizer(n, &model.stores()),
            epoch_losses: Vec::new(),
            partial: (0.0, 0),
        }
    }
}

/// What a per-epoch callback may ask the loop to do.
pub enum Control {
    Continue,
    Stop,
}

/// Per-sample loss closure: `(model, tape, bound, sample index, rng)`.
pub type LossFn<'a, M> = dyn FnMut(&M, &mut Tape, &<M as Trainable>::Bound, usize, &mut Rng) -> Result<Var> + 'a;

/// Runs optimizer steps until `cfg.epochs` epochs are done or `stop_after`
/// steps have been taken in total. Sample order per epoch and the per-sample
/// random streams depend only on `(cfg.seed, epoch, position)`, so a run
/// resumed from a saved [`TrainState`] matches an uninterrupted one.
pub fn fit<M: Trainable>(
    model: &mut M,
    cfg: &TrainConfig,
    n: usize,
    state: &mut TrainState,
    stop_after: Option<u64>,
    loss_fn: &mut LossFn<'_, M>,
    on_epoch: &mut dyn FnMut(usize, f64) -> Control,
) -> Result<()> {
    cfg.validate()?;
    ensure!(n > 0, Contract, "training set is empty");
    let eb = cfg.effective_batch();
    let spe = cfg.steps_per_epoch(n);
    let total = spe * cfg.epochs as u64;
    while state.opt.step < total {
        if stop_after.is_some_and(|s| state.opt.step >= s) {
            return Ok(());
        }
        let epoch = (state.opt.step / spe) as usize;
        let in_epoch = (state.opt.step % spe) as usize;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut sub_rng(cfg.seed, "order", epoch as u64));
        let start = in_epoch * eb;
        let batch = &order[start..(start + eb).min(n)];
        let scale = 1.0 / batch.len() as f64;
        for (k, &i) in batch.iter().enumerate() {
            let mut rng = sub_rng(cfg.seed, "masking", (epoch * n + start + k) as u64);
            let mut tape = Tape::new(cfg.precision);
            let bound = model.bind(&mut tape);
            let loss = loss_fn(model, &mut tape, &bound, i, &mut rng)?;
            let value = tape.value(loss)[0];
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("loss {value} at epoch {epoch}, sample {i}")));
            }
            state.partial.0 += value;
            state.partial.1 += 1;
            let scaled = tape.scale(loss, scale);
            tape.backward(scaled)?;
            model.accumulate(&tape, &bound);
        }
        state.opt.update(&mut model.stores_mut())?;
        if state.opt.step.is_multiple_of(spe) {
            let mean = state.partial.0 / state.partial.1 as f64;
            state.epoch_losses.push(mean);
            state.partial = (0.0, 0);
            if let Control::Stop = on_epoch(epoch, mean) {
                return Ok(());
            }
        }
    }
    Ok(())
}
