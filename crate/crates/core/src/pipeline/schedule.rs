use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Learning-rate schedule and AdamW moments shared by every stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub warmup_fraction: f64,
    pub floor_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { warmup_fraction: 0.1, floor_lr: 1e-6, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

impl ScheduleConfig {
    pub fn validate(&self, peak: f64) -> Result<()> {
        if !(0.0..1.0).contains(&self.warmup_fraction) || !(self.floor_lr >= 0.0) || !(peak >= self.floor_lr) {
            return Err(Error::Config(format!("invalid schedule {self:?} for peak {peak}")));
        }
        Ok(())
    }
}

/// Linear warm-up from 0 to `peak` over the first `warmup_fraction` of the run, then a
/// half-cosine from `peak` down to `floor_lr` at `total`.
pub fn lr_at(step: usize, total: usize, peak: f64, sched: &ScheduleConfig) -> f64 {
    let step = step.min(total) as f64;
    let total = total as f64;
    let warm = sched.warmup_fraction * total;
    if step <= warm && warm > 0.0 {
        return peak * (step / warm);
    }
    if total <= warm {
        return peak;
    }
    let progress = (step - warm) / (total - warm);
    sched.floor_lr + (peak - sched.floor_lr) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchors() {
        let s = ScheduleConfig::default();
        assert_eq!(lr_at(0, 500, 2e-4, &s), 0.0);
        assert_eq!(lr_at(50, 500, 2e-4, &s), 2e-4);
        assert_eq!(lr_at(500, 500, 2e-4, &s), 1e-6);
        assert_eq!(lr_at(25, 500, 2e-4, &s), 1e-4);
    }

    #[test]
    fn monotone_phases_and_continuity() {
        let s = ScheduleConfig::default();
        let (total, peak) = (1000, 1e-3);
        let lrs: Vec<f64> = (0..=total).map(|i| lr_at(i, total, peak, &s)).collect();
        assert!(lrs[..=100].windows(2).all(|w| w[1] > w[0]));
        assert!(lrs[100..].windows(2).all(|w| w[1] <= w[0]));
        let bound = peak / (0.1 * total as f64) + peak * std::f64::consts::PI / total as f64;
        assert!(lrs.windows(2).all(|w| (w[1] - w[0]).abs() <= bound));
    }
}
