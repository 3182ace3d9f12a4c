//! Adam with a warmup/decay schedule, and a minimal training loop.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EncoderState;
use crate::error::{Error, Result};
use crate::msp::PretrainInstance;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_steps: u64,
    /// The rate decays linearly to zero at this step.
    pub total_steps: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
            warmup_steps: 0,
            total_steps: 0,
        }
    }
}

impl AdamConfig {
    /// Learning rate for 1-based `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup_steps > 0 && step <= self.warmup_steps {
            return self.lr * step as f64 / self.warmup_steps as f64;
        }
        if self.total_steps > self.warmup_steps {
            let left = self.total_steps.saturating_sub(step) as f64;
            let span = (self.total_steps - self.warmup_steps) as f64;
            return self.lr * (left / span).max(0.0);
        }
        self.lr
    }
}

/// First and second moments, stored in the same layout as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: EncoderState,
    pub v: EncoderState,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &EncoderState) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    /// One update; returns the learning rate used.
    pub fn update(&mut self, cfg: &AdamConfig, params: &mut EncoderState, grads: &EncoderState) -> f64 {
        self.step += 1;
        let lr = cfg.lr_at(self.step);
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let g = grads.tensors();
        let m = self.m.tensors_mut();
        let v = self.v.tensors_mut();
        for (((p, g), m), v) in params.tensors_mut().into_iter().zip(g).zip(m).zip(v) {
            for (((p, &g), m), v) in p.data.iter_mut().zip(g.data).zip(m.data.iter_mut()).zip(v.data.iter_mut()) {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
            }
        }
        lr
    }
}

/// Batch-averaged losses for one optimizer step (or one evaluation pass).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: f64,
    pub msp_loss: f64,
    pub sop_loss: f64,
    pub msp_acc: f64,
    pub sop_acc: f64,
    pub lr: f64,
}

#[derive(Default)]
struct Tally {
    msp: f64,
    sop: f64,
    targets: usize,
    correct: usize,
    sop_correct: usize,
    n: usize,
}

impl Tally {
    fn add(&mut self, l: &super::LossBreakdown) {
        self.msp += l.msp;
        self.sop += l.sop;
        self.targets += l.msp_targets;
        self.correct += l.msp_correct;
        self.sop_correct += usize::from(l.sop_correct);
        self.n += 1;
    }

    fn metrics(&self, step: u64, lr: f64) -> StepMetrics {
        let n = self.n.max(1) as f64;
        StepMetrics {
            step,
            loss: (self.msp + self.sop) / n,
            msp_loss: self.msp / n,
            sop_loss: self.sop / n,
            msp_acc: self.correct as f64 / self.targets.max(1) as f64,
            sop_acc: self.sop_correct as f64 / n,
            lr,
        }
    }
}

/// Parameters, optimizer state and the dropout seed.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub state: EncoderState,
    pub adam: AdamState,
    pub config: AdamConfig,
    pub seed: u64,
}

impl Trainer {
    pub fn new(state: EncoderState, config: AdamConfig, seed: u64) -> Self {
        let adam = AdamState::new(&state);
        Trainer { state, adam, config, seed }
    }

    pub fn step(&self) -> u64 {
        self.adam.step
    }

    /// Average `msp + sop` over the batch and take one Adam step. Dropout
    /// draws come from a stream keyed by the step number, so a resumed run
    /// reproduces an uninterrupted one.
    pub fn train_step(&mut self, batch: &[PretrainInstance]) -> Result<StepMetrics> {
        if batch.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut grads = self.state.zeros_like();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.adam.step + 1);
        let mut tally = Tally::default();
        for inst in batch {
            let l = self.state.loss_and_grad(inst, Some(&mut grads), Some(&mut rng))?;
            tally.add(&l);
        }
        grads.scale(1.0 / batch.len() as f64);
        let lr = self.adam.update(&self.config, &mut self.state, &grads);
        Ok(tally.metrics(self.adam.step, lr))
    }
}

/// Eval-mode losses and accuracies over `instances`.
pub fn evaluate(state: &EncoderState, instances: &[PretrainInstance]) -> Result<StepMetrics> {
    let mut tally = Tally::default();
    for inst in instances {
        tally.add(&state.loss_and_grad(inst, None, None)?);
    }
    Ok(tally.metrics(0, 0.0))
}
