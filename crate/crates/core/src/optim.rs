//! Adam and the step learning-rate schedule.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math;
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Learning rate multiplied by `factor` at each milestone epoch (0-indexed:
/// from epoch `milestone` onward).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub base_lr: f64,
    pub milestones: Vec<usize>,
    pub factor: f64,
}

impl StepSchedule {
    pub fn constant(lr: f64) -> Self {
        StepSchedule { base_lr: lr, milestones: vec![], factor: 0.1 }
    }

    /// Milestones placed at the same fractions of the run as 45/70 and 60/70.
    pub fn proportional(base_lr: f64, epochs: usize) -> Self {
        let at = |num: usize| (epochs * num + 35) / 70;
        let mut milestones: Vec<usize> = [at(45), at(60)].into_iter().filter(|&m| m > 0 && m < epochs).collect();
        milestones.dedup();
        StepSchedule { base_lr, milestones, factor: 0.1 }
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        let drops = self.milestones.iter().filter(|&&m| epoch >= m).count();
        let mut lr = self.base_lr;
        for _ in 0..drops {
            lr *= self.factor;
        }
        lr
    }
}

/// Adam state over one flat parameter buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

impl Adam {
    pub fn new(config: AdamConfig, n: usize) -> Self {
        Adam { config, step: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    /// One update with learning rate `lr`; gradients must be finite.
    pub fn update<T: Real>(&mut self, params: &mut [T], grads: &[T], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape("optimizer state does not match parameter count"));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        self.step += 1;
        let c = &self.config;
        let bc1 = 1.0 - math::powi(c.beta1, self.step as i32);
        let bc2 = 1.0 - math::powi(c.beta2, self.step as i32);
        let step = lr / bc1;
        let (b1, b2) = (c.beta1 as f32, c.beta2 as f32);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            let g = g.as_f64() as f32;
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let denom = crate::math::sqrt(*v as f64 / bc2) + c.eps;
            *p -= T::lit(step * *m as f64 / denom);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_steps_at_milestones() {
        let s = StepSchedule { base_lr: 1e-4, milestones: vec![45, 60], factor: 0.1 };
        assert_eq!(s.lr(0), 1e-4);
        assert_eq!(s.lr(44), 1e-4);
        assert!((s.lr(45) - 1e-5).abs() < 1e-18);
        assert!((s.lr(60) - 1e-6).abs() < 1e-18);
        assert_eq!(StepSchedule::proportional(1.0, 70).milestones, vec![45, 60]);
        assert_eq!(StepSchedule::proportional(1.0, 14).milestones, vec![9, 12]);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut x = vec![3.0f64, -2.0];
        let mut opt = Adam::new(AdamConfig { lr: 0.1, ..AdamConfig::default() }, 2);
        for _ in 0..500 {
            let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            opt.update(&mut x, &g, 0.1).unwrap();
        }
        assert!(x.iter().all(|v| v.abs() < 1e-2), "{x:?}");
    }

    #[test]
    fn rejects_non_finite_gradients() {
        let mut x = vec![0.0f64];
        let mut opt = Adam::new(AdamConfig::default(), 1);
        assert!(opt.update(&mut x, &[f64::INFINITY], 0.1).is_err());
    }
}
