use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optimizer hyper-parameters and the warmup + linear-decay learning-rate
/// schedule. Defaults: Adam, lr 1e-4, betas (0.9, 0.999), weight decay 0.01,
/// warmup over 5% of the steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub peak_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub total_steps: usize,
    pub batch_size: usize,
    pub seq_len: usize,
    /// Passes over the training examples that feed the steps.
    #[serde(default = "one")]
    pub epochs: usize,
}

fn one() -> usize {
    1
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            peak_lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.01,
            warmup_fraction: 0.05,
            total_steps: 1000,
            batch_size: 32,
            seq_len: 256,
            epochs: 1,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("schedule: {m}")));
        if !(self.peak_lr >= 0.0 && self.peak_lr.is_finite()) {
            return bad("peak_lr must be nonnegative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad("weight_decay must be nonnegative");
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return bad("warmup_fraction must lie in [0, 1]");
        }
        if self.total_steps == 0 || self.batch_size == 0 || self.seq_len == 0 || self.epochs == 0 {
            return bad("total_steps, batch_size, seq_len and epochs must be positive");
        }
        Ok(())
    }

    /// Number of warmup steps (`warmup_fraction · total_steps`, rounded).
    pub fn warmup_steps(&self) -> usize {
        (self.warmup_fraction * self.total_steps as f64).round() as usize
    }

    /// Learning rate at `step`: linear ramp from 0 to `peak_lr` over the
    /// warmup, then linear decay to 0 at `total_steps`.
    pub fn lr_at(&self, step: usize) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::InvalidArgument(format!(
                "step {step} beyond total_steps {}",
                self.total_steps
            )));
        }
        let warm = self.warmup_steps();
        let total = self.total_steps;
        let lr = if step < warm {
            self.peak_lr * step as f64 / warm as f64
        } else if total == warm {
            self.peak_lr
        } else {
            self.peak_lr * (total - step) as f64 / (total - warm) as f64
        };
        Ok(lr)
    }
}
