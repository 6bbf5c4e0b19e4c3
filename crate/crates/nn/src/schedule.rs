use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};

/// Learning-rate decay schedules, evaluated per optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    /// `lr0 * rate^(step / decay_steps)`
    Exponential { initial_lr: f64, decay_rate: f64, decay_steps: f64 },
    /// `lr0 / (1 + rate * step / decay_steps)`
    InverseTime { initial_lr: f64, decay_rate: f64, decay_steps: f64 },
    /// `values[i]` on `[boundaries[i-1], boundaries[i])`; needs one more value than boundaries.
    PiecewiseConstant { boundaries: Vec<u64>, values: Vec<f64> },
    /// `(lr0 - end) * (1 - min(step, total) / total)^power + end`
    Polynomial { initial_lr: f64, end_lr: f64, power: f64, total_steps: f64 },
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        LrSchedule::PiecewiseConstant { boundaries: vec![], values: vec![lr] }
    }

    pub fn initial_lr(&self) -> f64 {
        match self {
            LrSchedule::Exponential { initial_lr, .. }
            | LrSchedule::InverseTime { initial_lr, .. }
            | LrSchedule::Polynomial { initial_lr, .. } => *initial_lr,
            LrSchedule::PiecewiseConstant { values, .. } => values.first().copied().unwrap_or(0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(NnError::Config(msg));
        match self {
            LrSchedule::Exponential { initial_lr, decay_rate, decay_steps }
            | LrSchedule::InverseTime { initial_lr, decay_rate, decay_steps } => {
                if *initial_lr <= 0.0 || *decay_rate <= 0.0 || *decay_steps <= 0.0 {
                    return bad(format!("schedule parameters must be positive: {self:?}"));
                }
            }
            LrSchedule::PiecewiseConstant { boundaries, values } => {
                if values.len() != boundaries.len() + 1 {
                    return bad("piecewise schedule needs one more value than boundaries".into());
                }
                if boundaries.windows(2).any(|w| w[0] >= w[1]) {
                    return bad("piecewise boundaries must increase".into());
                }
                if values.iter().any(|&v| v <= 0.0) {
                    return bad("piecewise values must be positive".into());
                }
            }
            LrSchedule::Polynomial { initial_lr, end_lr, power, total_steps } => {
                if *initial_lr <= 0.0 || *end_lr <= 0.0 || *power <= 0.0 || *total_steps <= 0.0 {
                    return bad(format!("schedule parameters must be positive: {self:?}"));
                }
            }
        }
        Ok(())
    }

    pub fn value(&self, step: u64) -> f64 {
        let s = step as f64;
        match self {
            LrSchedule::Exponential { initial_lr, decay_rate, decay_steps } => {
                initial_lr * decay_rate.powf(s / decay_steps)
            }
            LrSchedule::InverseTime { initial_lr, decay_rate, decay_steps } => {
                initial_lr / (1.0 + decay_rate * s / decay_steps)
            }
            LrSchedule::PiecewiseConstant { boundaries, values } => {
                let idx = boundaries.iter().take_while(|&&b| step >= b).count();
                values[idx]
            }
            LrSchedule::Polynomial { initial_lr, end_lr, power, total_steps } => {
                let frac = 1.0 - s.min(*total_steps) / total_steps;
                (initial_lr - end_lr) * frac.powf(*power) + end_lr
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_halves() {
        let s = LrSchedule::Exponential { initial_lr: 0.1, decay_rate: 0.5, decay_steps: 10.0 };
        assert!((s.value(10) - 0.05).abs() < 1e-15);
        assert_eq!(s.value(0), 0.1);
    }

    #[test]
    fn inverse_time() {
        let s = LrSchedule::InverseTime { initial_lr: 0.1, decay_rate: 1.0, decay_steps: 1.0 };
        assert!((s.value(4) - 0.02).abs() < 1e-15);
    }

    #[test]
    fn polynomial_clamps_at_total() {
        let s = LrSchedule::Polynomial { initial_lr: 0.1, end_lr: 0.001, power: 2.0, total_steps: 100.0 };
        assert_eq!(s.value(100), 0.001);
        assert_eq!(s.value(1000), 0.001);
        assert!((s.value(50) - (0.099 * 0.25 + 0.001)).abs() < 1e-15);
    }

    #[test]
    fn piecewise_intervals() {
        let s = LrSchedule::PiecewiseConstant { boundaries: vec![10, 20], values: vec![1.0, 0.5, 0.1] };
        s.validate().unwrap();
        assert_eq!(s.value(0), 1.0);
        assert_eq!(s.value(9), 1.0);
        assert_eq!(s.value(10), 0.5);
        assert_eq!(s.value(25), 0.1);
    }

    #[test]
    fn bad_piecewise_rejected() {
        let s = LrSchedule::PiecewiseConstant { boundaries: vec![10], values: vec![1.0] };
        assert!(s.validate().is_err());
    }
}
