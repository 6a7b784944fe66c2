//! Iteration-indexed schedules for the weight decay rate, the
//! cross-supervision weight and the learning rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub total_iters: usize,
    pub alpha0: f64,
    pub alpha_update_every: usize,
    pub lambda_oc: f64,
    pub lr0: f64,
    pub lr_min: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            total_iters: 6000,
            alpha0: 0.95,
            alpha_update_every: 1000,
            lambda_oc: 0.8,
            lr0: 0.01,
            lr_min: 0.0001,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha0) {
            return Err(Error::invalid("alpha0", "must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.lambda_oc) {
            return Err(Error::invalid("lambda_oc", "must lie in [0, 1]"));
        }
        if !(self.lr_min > 0.0 && self.lr0 >= self.lr_min) {
            return Err(Error::invalid("lr0", "need lr0 >= lr_min > 0"));
        }
        if self.alpha_update_every == 0 || self.total_iters % self.alpha_update_every != 0 {
            return Err(Error::invalid(
                "alpha_update_every",
                format!("{} must divide total_iters {}", self.alpha_update_every, self.total_iters),
            ));
        }
        if self.blocks() < 2 {
            return Err(Error::invalid("alpha_update_every", "need at least two alpha blocks"));
        }
        Ok(())
    }

    pub fn blocks(&self) -> usize {
        self.total_iters / self.alpha_update_every.max(1)
    }

    /// Position in training, clamped to `[0, 1]`.
    pub fn progress(&self, iter: usize) -> f64 {
        (iter as f64 / self.total_iters as f64).clamp(0.0, 1.0)
    }

    /// Index of the alpha block containing `iter`.
    pub fn block(&self, iter: usize) -> usize {
        (iter / self.alpha_update_every).min(self.blocks() - 1)
    }
}

/// Half-cosine decay over block index: `alpha0` on the first block, 0 on the last.
pub fn alpha_at(iter: usize, cfg: &ScheduleConfig) -> f64 {
    let k = cfg.block(iter);
    let last = cfg.blocks() - 1;
    if k == last {
        return 0.0;
    }
    cfg.alpha0 * 0.5 * (1.0 + (std::f64::consts::PI * k as f64 / last as f64).cos())
}

/// `exp(-5 (1 - t)^2)` for `t` in `[0, 1]`.
pub fn gaussian_rampup(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    (-5.0 * (1.0 - t) * (1.0 - t)).exp()
}

pub fn lambda_at(iter: usize, cfg: &ScheduleConfig) -> f64 {
    cfg.lambda_oc * gaussian_rampup(cfg.progress(iter))
}

/// Polynomial decay with exponent 0.9, written so both endpoints are exact.
pub fn lr_at(iter: usize, cfg: &ScheduleConfig) -> f64 {
    let f = (1.0 - cfg.progress(iter)).powf(0.9);
    cfg.lr0 * f + cfg.lr_min * (1.0 - f)
}
