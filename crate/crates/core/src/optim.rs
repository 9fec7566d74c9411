//! Adam, learning-rate schedulers, and early stopping.
//!
//! The schedulers and the early-stop tracker are pure state machines over
//! the sequence of validation losses, one call per epoch.

use crate::error::{NialError, Result};
use crate::model::Parameter;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update from the gradients stored on each parameter. Moment
    /// buffers are created on the first call and must keep matching shapes.
    pub fn step(&mut self, params: &mut [Parameter]) -> Result<()> {
        for p in params.iter() {
            if p.value.grad().is_none() {
                return Err(NialError::Contract(format!(
                    "parameter {} has no gradient",
                    p.name
                )));
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.value.numel()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len()
            || self
                .m
                .iter()
                .zip(params.iter())
                .any(|(m, p)| m.len() != p.value.numel())
        {
            return Err(NialError::Contract(
                "parameter set changed between Adam steps".into(),
            ));
        }

        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grad = p.value.grad().expect("checked").to_vec();
            for (((theta, g), m), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(&grad)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *theta -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Epoch-level learning-rate policy.
pub trait LrScheduler {
    /// Consumes one validation loss and returns the learning rate for the
    /// next epoch.
    fn on_epoch_end(&mut self, val_loss: f64) -> Result<f64>;
    fn current_lr(&self) -> f64;
}

fn check_loss(val_loss: f64) -> Result<()> {
    if val_loss.is_finite() {
        Ok(())
    } else {
        Err(NialError::Divergence(format!(
            "validation loss is {val_loss}"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauParams {
    pub factor: f64,
    pub patience: usize,
    pub min_delta: f64,
    pub min_lr: f64,
}

impl Default for PlateauParams {
    fn default() -> Self {
        Self {
            factor: 0.5,
            patience: 3,
            min_delta: 1e-4,
            min_lr: 1e-6,
        }
    }
}

/// Reduce-on-plateau: an epoch improves when `val_loss < best - min_delta`.
/// Once more than `patience` consecutive epochs fail to improve, the rate
/// becomes `max(lr * factor, min_lr)` and the counter restarts (the best
/// loss is kept).
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveScheduler {
    pub params: PlateauParams,
    current_lr: f64,
    best_val_loss: f64,
    epochs_since_improvement: usize,
}

impl AdaptiveScheduler {
    pub fn new(initial_lr: f64, params: PlateauParams) -> Result<Self> {
        if !(params.factor > 0.0 && params.factor < 1.0) {
            return Err(NialError::Config(format!(
                "scheduler factor {} outside (0, 1)",
                params.factor
            )));
        }
        if !(initial_lr > 0.0 && params.min_lr >= 0.0 && params.min_delta >= 0.0) {
            return Err(NialError::Config("scheduler rates must be positive".into()));
        }
        Ok(Self {
            params,
            current_lr: initial_lr.max(params.min_lr),
            best_val_loss: f64::INFINITY,
            epochs_since_improvement: 0,
        })
    }

    pub fn best_val_loss(&self) -> f64 {
        self.best_val_loss
    }

    pub fn epochs_since_improvement(&self) -> usize {
        self.epochs_since_improvement
    }
}

impl LrScheduler for AdaptiveScheduler {
    fn on_epoch_end(&mut self, val_loss: f64) -> Result<f64> {
        check_loss(val_loss)?;
        if val_loss < self.best_val_loss - self.params.min_delta {
            self.best_val_loss = val_loss;
            self.epochs_since_improvement = 0;
        } else {
            self.epochs_since_improvement += 1;
            if self.epochs_since_improvement > self.params.patience {
                self.current_lr = (self.current_lr * self.params.factor).max(self.params.min_lr);
                self.epochs_since_improvement = 0;
            }
        }
        Ok(self.current_lr)
    }

    fn current_lr(&self) -> f64 {
        self.current_lr
    }
}

/// Constant learning rate; the baseline for scheduler comparisons.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticScheduler {
    lr: f64,
}

impl StaticScheduler {
    pub fn new(lr: f64) -> Self {
        Self { lr }
    }
}

impl LrScheduler for StaticScheduler {
    fn on_epoch_end(&mut self, val_loss: f64) -> Result<f64> {
        check_loss(val_loss)?;
        Ok(self.lr)
    }

    fn current_lr(&self) -> f64 {
        self.lr
    }
}

/// Signals a stop once more than `stop_patience` consecutive epochs fail to
/// beat `best - min_delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub stop_patience: usize,
    pub min_delta: f64,
    best_val_loss: f64,
    epochs_since_improvement: usize,
}

impl EarlyStopping {
    pub fn new(stop_patience: usize, min_delta: f64) -> Self {
        Self {
            stop_patience,
            min_delta,
            best_val_loss: f64::INFINITY,
            epochs_since_improvement: 0,
        }
    }

    pub fn on_epoch_end(&mut self, val_loss: f64) -> Result<bool> {
        check_loss(val_loss)?;
        if val_loss < self.best_val_loss - self.min_delta {
            self.best_val_loss = val_loss;
            self.epochs_since_improvement = 0;
        } else {
            self.epochs_since_improvement += 1;
        }
        Ok(self.epochs_since_improvement > self.stop_patience)
    }

    pub fn best_val_loss(&self) -> f64 {
        self.best_val_loss
    }
}
