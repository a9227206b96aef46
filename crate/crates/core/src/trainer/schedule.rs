use std::f64::consts::PI;

use crate::{Error, Result};

/// Linear warmup to `base_lr`, then cosine decay to zero at `total_epochs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_epochs: f64,
    pub total_epochs: f64,
}

impl LrSchedule {
    pub fn new(base_lr: f64, warmup_epochs: f64, total_epochs: f64) -> Result<Self> {
        if !(base_lr >= 0.0 && warmup_epochs >= 0.0 && warmup_epochs < total_epochs) {
            return Err(Error::config(format!(
                "schedule needs base_lr ≥ 0 and warmup ({warmup_epochs}) < epochs ({total_epochs})"
            )));
        }
        Ok(Self {
            base_lr,
            warmup_epochs,
            total_epochs,
        })
    }

    /// Learning rate at fractional epoch `t`.
    pub fn at(&self, t: f64) -> f64 {
        if t < self.warmup_epochs {
            return self.base_lr * t.max(0.0) / self.warmup_epochs;
        }
        let span = self.total_epochs - self.warmup_epochs;
        let progress = ((t - self.warmup_epochs) / span).clamp(0.0, 1.0);
        self.base_lr * 0.5 * (1.0 + (PI * progress).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn reference_points() {
        let s = LrSchedule::new(0.01, 5.0, 20.0).unwrap();
        assert_eq!(s.at(0.0), 0.0);
        assert_abs_diff_eq!(s.at(5.0), 0.01, epsilon = 1e-15);
        assert_abs_diff_eq!(s.at(12.5), 0.005, epsilon = 1e-15);
        assert_abs_diff_eq!(s.at(20.0), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.at(2.5), 0.005, epsilon = 1e-15);
    }

    #[test]
    fn continuous_at_junction() {
        let s = LrSchedule::new(0.01, 5.0, 20.0).unwrap();
        assert_abs_diff_eq!(s.at(5.0 - 1e-9), s.at(5.0 + 1e-9), epsilon = 1e-11);
    }

    #[test]
    fn warmup_must_precede_end() {
        assert!(LrSchedule::new(0.01, 5.0, 5.0).is_err());
    }
}
