use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    /// Linear warmup to the peak, then linear decay to zero.
    Pretrain,
    /// Linear decay from the peak to zero, no warmup.
    Finetune,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub peak_lr: f64,
    pub total_steps: u64,
    pub warmup_fraction: f64,
}

impl ScheduleSpec {
    pub const DEFAULT_WARMUP: f64 = 0.02;

    pub fn pretrain(peak_lr: f64, total_steps: u64) -> Self {
        Self {
            kind: ScheduleKind::Pretrain,
            peak_lr,
            total_steps,
            warmup_fraction: Self::DEFAULT_WARMUP,
        }
    }

    pub fn finetune(peak_lr: f64, total_steps: u64) -> Self {
        Self {
            kind: ScheduleKind::Finetune,
            peak_lr,
            total_steps,
            warmup_fraction: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_steps < 1 {
            return Err(invalid("schedule needs at least one step"));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(invalid(format!(
                "warmup fraction {} outside [0, 1)",
                self.warmup_fraction
            )));
        }
        Ok(())
    }
}

/// Learning rate at `step` (0-based, `0..=total_steps`).
pub fn lr_at(step: u64, spec: &ScheduleSpec) -> Result<f64> {
    spec.validate()?;
    let total = spec.total_steps;
    if step > total {
        return Err(Error::StepOutOfRange { step, total });
    }
    let s = step as f64;
    let t = total as f64;
    let lr = match spec.kind {
        ScheduleKind::Finetune => spec.peak_lr * (t - s) / t,
        ScheduleKind::Pretrain => {
            let warm = spec.warmup_fraction * t;
            if s < warm {
                spec.peak_lr * s / warm
            } else {
                spec.peak_lr * (t - s) / (t - warm)
            }
        }
    };
    Ok(lr)
}
