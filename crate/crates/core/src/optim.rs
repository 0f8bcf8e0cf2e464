//! Adam without weight decay, and a cosine learning-rate schedule with
//! fixed-period warm restarts.

use std::f64::consts::PI;

use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Moment estimates for one parameter tensor, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::dims("params", params.len(), "optimizer state", self.m.len()));
        }
        if grad.len() != params.len() {
            return Err(Error::dims("grad", grad.len(), "params", params.len()));
        }
        if !(lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + EPS);
        }
        Ok(())
    }
}

/// Cosine decay from `base_lr` to `min_lr` over `restart_period` epochs,
/// then back to `base_lr`. Evaluated per optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub base_lr: f64,
    pub min_lr: f64,
    pub restart_period: usize,
    pub steps_per_epoch: usize,
}

impl Schedule {
    pub fn new(base_lr: f64, min_lr: f64, restart_period: usize, steps_per_epoch: usize) -> Result<Self> {
        if !(base_lr > 0.0) || !base_lr.is_finite() {
            return Err(Error::Config(format!("base lr must be positive, got {base_lr}")));
        }
        if !(min_lr >= 0.0) || min_lr > base_lr {
            return Err(Error::Config(format!(
                "min lr must lie in [0, base lr], got {min_lr}"
            )));
        }
        if restart_period == 0 || steps_per_epoch == 0 {
            return Err(Error::Config(
                "restart period and steps per epoch must be at least 1".into(),
            ));
        }
        Ok(Self {
            base_lr,
            min_lr,
            restart_period,
            steps_per_epoch,
        })
    }

    pub fn period(&self) -> u64 {
        (self.restart_period * self.steps_per_epoch) as u64
    }

    pub fn lr_at(&self, global_step: u64) -> f64 {
        let p = self.period();
        let u = (global_step % p) as f64 / p as f64;
        let lr = self.min_lr + 0.5 * (self.base_lr - self.min_lr) * (1.0 + (PI * u).cos());
        lr.min(self.base_lr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn first_step_moves_by_lr() {
        let mut st = AdamState::new(1);
        let mut w = [0.0];
        st.step(&mut w, &[1.0], 0.1).unwrap();
        assert_relative_eq!(w[0], -0.1 / (1.0 + 1e-8), max_relative = 1e-15);
        assert!((w[0] + 0.0999999990).abs() < 1e-12);
        assert_eq!(st.steps(), 1);
    }

    #[test]
    fn zero_grad_is_a_fixed_point() {
        let mut st = AdamState::new(3);
        let mut w = [0.5, -2.0, 3.0];
        for _ in 0..100 {
            st.step(&mut w, &[0.0; 3], 1e-2).unwrap();
        }
        assert_eq!(w, [0.5, -2.0, 3.0]);
        assert_eq!(st.steps(), 100);
    }

    #[test]
    fn shape_mismatch() {
        let mut st = AdamState::new(2);
        assert!(st.step(&mut [0.0; 3], &[0.0; 3], 0.1).is_err());
        assert!(st.step(&mut [0.0; 2], &[0.0; 1], 0.1).is_err());
        assert!(st.step(&mut [0.0; 2], &[0.0; 2], 0.0).is_err());
        assert_eq!(st.steps(), 0);
    }

    #[test]
    fn deterministic_trajectory() {
        let run = || {
            let mut st = AdamState::new(2);
            let mut w = [1.0, -1.0];
            for k in 0..50 {
                let g = [(k as f64).sin(), w[0] * w[1]];
                st.step(&mut w, &g, 1e-2).unwrap();
            }
            w
        };
        let (a, b) = (run(), run());
        assert_eq!(a[0].to_bits(), b[0].to_bits());
        assert_eq!(a[1].to_bits(), b[1].to_bits());
    }

    #[test]
    fn second_moment_nonnegative() {
        let mut st = AdamState::new(2);
        let mut w = [0.0, 0.0];
        st.step(&mut w, &[-3.0, 2.0], 0.1).unwrap();
        assert!(st.second_moment().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn schedule_endpoints() {
        let s = Schedule::new(1e-4, 0.0, 5, 10).unwrap();
        assert_eq!(s.lr_at(0), 1e-4);
        assert_relative_eq!(s.lr_at(25), 0.5e-4, max_relative = 1e-12);
        assert!(s.lr_at(49) < 1e-6);
        assert_eq!(s.lr_at(50), 1e-4);
        assert_eq!(s.lr_at(100), 1e-4);

        let s = Schedule::new(1.0, 0.2, 1, 2).unwrap();
        assert_relative_eq!(s.lr_at(1), 0.6, max_relative = 1e-12);
    }

    #[test]
    fn schedule_validation() {
        assert!(Schedule::new(0.0, 0.0, 5, 1).is_err());
        assert!(Schedule::new(1e-4, 1e-3, 5, 1).is_err());
        assert!(Schedule::new(1e-4, 0.0, 0, 1).is_err());
        assert!(Schedule::new(1e-4, 0.0, 5, 0).is_err());
    }
}
