use serde::{Deserialize, Serialize};

use crate::error::{Result, SpnError};

/// Step schedules for the learning rate and the batch-norm momentum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub lr0: f64,
    pub lr_decay: f64,
    pub lr_period: u32,
    pub lr_floor: f64,
    pub bn_m0: f64,
    pub bn_decay: f64,
    pub bn_period: u32,
    pub bn_cap: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            lr0: 0.001,
            lr_decay: 0.7,
            lr_period: 20,
            lr_floor: 1e-5,
            bn_m0: 0.9,
            bn_decay: 0.5,
            bn_period: 20,
            bn_cap: 0.99,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !(self.lr0 >= 0.0 && self.lr_floor >= 0.0)
            || !unit(self.lr_decay)
            || !unit(self.bn_m0)
            || !unit(self.bn_decay)
            || !unit(self.bn_cap)
            || self.lr_period == 0
            || self.bn_period == 0
        {
            return Err(SpnError::Config(format!("invalid schedule: {self:?}")));
        }
        Ok(())
    }

    /// `max(floor, lr0 · decay^⌊epoch/period⌋)`.
    pub fn lr(&self, epoch: u32) -> f64 {
        let steps = (epoch / self.lr_period) as i32;
        (self.lr0 * self.lr_decay.powi(steps)).max(self.lr_floor)
    }

    /// `min(cap, 1 − (1 − m0) · decay^⌊epoch/period⌋)`.
    pub fn bn_momentum(&self, epoch: u32) -> f64 {
        let steps = (epoch / self.bn_period) as i32;
        (1.0 - (1.0 - self.bn_m0) * self.bn_decay.powi(steps)).min(self.bn_cap)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_values() {
        let s = ScheduleConfig::default();
        assert_eq!(s.lr(0), 0.001);
        assert_eq!(s.lr(19), 0.001);
        assert_eq!(s.lr(20), 0.0007);
        assert_eq!(s.lr(1000), 1e-5);
        assert_eq!(s.bn_momentum(0), 0.9);
        assert_eq!(s.bn_momentum(20), 0.95);
        assert_eq!(s.bn_momentum(200), 0.99);
    }
}
