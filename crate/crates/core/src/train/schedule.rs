use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Warmup used for desk-scale runs; 25000 is the full-size value.
pub const DESK_WARMUP: usize = 400;
pub const FULL_WARMUP: usize = 25_000;

/// `scale · d^-0.5 · min(step^-0.5, step · warmup^-1.5)` for `step ≥ 1`.
pub fn noam_lr(step: usize, d_model: usize, warmup: usize, scale: f64) -> f64 {
    let s = step.max(1) as f64;
    let w = warmup.max(1) as f64;
    scale * (d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoamSchedule {
    pub d_model: usize,
    pub warmup: usize,
    pub scale: f64,
}

impl NoamSchedule {
    pub fn new(d_model: usize, warmup: usize, scale: f64) -> Result<Self> {
        if warmup == 0 || d_model == 0 {
            return Err(Error::Config("warmup and d_model must be at least 1".into()));
        }
        Ok(Self { d_model, warmup, scale })
    }

    pub fn lr(&self, step: usize) -> f64 {
        noam_lr(step, self.d_model, self.warmup, self.scale)
    }
}
