use serde::{Deserialize, Serialize};

/// Learning-rate schedule: linear warmup to `base_lr`, then either constant
/// or cosine decay to zero at `total_steps`. Steps past the end clamp to the
/// final value.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub kind: ScheduleKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    CosineWithWarmup,
}

impl LrSchedule {
    pub fn constant(base_lr: f64) -> Self {
        LrSchedule {
            base_lr,
            warmup_steps: 0,
            total_steps: u64::MAX,
            kind: ScheduleKind::Constant,
        }
    }

    pub fn cosine(base_lr: f64, warmup_steps: u64, total_steps: u64) -> Self {
        LrSchedule {
            base_lr,
            warmup_steps,
            total_steps,
            kind: ScheduleKind::CosineWithWarmup,
        }
    }

    pub fn lr_at(&self, t: u64) -> f64 {
        match self.kind {
            ScheduleKind::Constant => self.base_lr,
            ScheduleKind::CosineWithWarmup => {
                if self.warmup_steps > 0 && t < self.warmup_steps {
                    return self.base_lr * t as f64 / self.warmup_steps as f64;
                }
                let t = t.min(self.total_steps);
                let span = (self.total_steps - self.warmup_steps).max(1);
                let progress = (t - self.warmup_steps) as f64 / span as f64;
                self.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}
