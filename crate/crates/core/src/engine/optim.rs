//! Adam, weight EMA and the halving learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use super::EngineError;

pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self { lr, beta1, beta2 }
    }

    fn validate(&self) -> Result<(), EngineError> {
        let betas_ok = (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2);
        if !(self.lr > 0.0) || !betas_ok {
            return Err(EngineError::InvalidSpec(format!(
                "Adam needs lr > 0 and betas in [0, 1): {self:?}"
            )));
        }
        Ok(())
    }
}

/// Bias-corrected Adam with `ε = 1e-8`.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    lr: f64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, shapes: &[[usize; 2]]) -> Result<Self, EngineError> {
        config.validate()?;
        Ok(Self {
            config,
            lr: config.lr,
            first: shapes.iter().map(|&[r, c]| Tensor::zeros(r, c)).collect(),
            second: shapes.iter().map(|&[r, c]| Tensor::zeros(r, c)).collect(),
            step: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Learning rate used from the next step on (for schedules).
    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<(), EngineError> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(EngineError::Shape(format!(
                "Adam tracks {} tensors, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(EngineError::Shape(format!(
                    "Adam parameter {:?} vs gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, .. } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            let iter = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut());
            for (((pv, &gv), mv), vv) in iter {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}

/// Exponential moving average of a parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct Ema {
    decay: f64,
    shadow: Vec<Tensor>,
}

impl Ema {
    /// Starts the shadow at `initial`.
    pub fn new(decay: f64, initial: &[&Tensor]) -> Result<Self, EngineError> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(EngineError::InvalidSpec(format!(
                "EMA decay must be in (0, 1), got {decay}"
            )));
        }
        Ok(Self {
            decay,
            shadow: initial.iter().map(|t| (*t).clone()).collect(),
        })
    }

    pub fn from_shadow(decay: f64, shadow: Vec<Tensor>) -> Result<Self, EngineError> {
        let refs: Vec<&Tensor> = shadow.iter().collect();
        let mut ema = Self::new(decay, &refs)?;
        ema.shadow = shadow;
        Ok(ema)
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn shadow(&self) -> &[Tensor] {
        &self.shadow
    }

    /// `shadow ← decay·shadow + (1 − decay)·param`.
    pub fn update(&mut self, params: &[&Tensor]) -> Result<(), EngineError> {
        if params.len() != self.shadow.len()
            || params.iter().zip(&self.shadow).any(|(p, s)| p.shape() != s.shape())
        {
            return Err(EngineError::Shape("EMA shadow does not match parameters".into()));
        }
        let d = self.decay;
        for (s, p) in self.shadow.iter_mut().zip(params) {
            for (sv, &pv) in s.data_mut().iter_mut().zip(p.data()) {
                *sv = d * *sv + (1.0 - d) * pv;
            }
        }
        Ok(())
    }
}

/// `base / 2^k` where `k` counts the milestones at or before `epoch`.
pub fn lr_schedule_value(base: f64, epoch: usize, milestones: &[usize]) -> f64 {
    let k = milestones.iter().filter(|&&m| m <= epoch).count();
    base / 2f64.powi(k as i32)
}

/// Milestones placed at the given fractions of `epochs` (rounded, deduplicated,
/// strictly increasing).
pub fn milestones_at_fractions(epochs: usize, fractions: &[f64]) -> Vec<usize> {
    let mut out: Vec<usize> = fractions
        .iter()
        .map(|f| (f * epochs as f64).round() as usize)
        .filter(|&m| m > 0)
        .collect();
    out.dedup();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> Tensor {
        Tensor::scalar(v)
    }

    #[test]
    fn first_adam_step_is_lr_over_one_plus_eps() {
        let mut adam = Adam::new(AdamConfig::new(0.1, 0.9, 0.999), &[[1, 1]]).unwrap();
        let mut p = one(0.0);
        adam.step(&mut [&mut p], &[one(1.0)]).unwrap();
        let want = -0.1 * 1.0 / (1.0 + 1e-8);
        assert!((p.item() - want).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut adam = Adam::new(AdamConfig::new(0.1, 0.9, 0.999), &[[2, 1]]).unwrap();
        let mut p = Tensor::column(&[1.5, -2.0]);
        for _ in 0..3 {
            adam.step(&mut [&mut p], &[Tensor::zeros(2, 1)]).unwrap();
        }
        assert_eq!(p.data(), &[1.5, -2.0]);
    }

    #[test]
    fn two_steps_without_momentum() {
        let alpha = 0.05;
        let mut adam = Adam::new(AdamConfig::new(alpha, 0.0, 0.999), &[[1, 1]]).unwrap();
        let mut p = one(0.0);
        adam.step(&mut [&mut p], &[one(1.0)]).unwrap();
        let after_one = p.item();
        adam.step(&mut [&mut p], &[one(1.0)]).unwrap();
        let delta = p.item() - after_one;
        assert!((delta - (-alpha / (1.0 + 1e-8))).abs() < 1e-15);
        assert!((delta + alpha).abs() < 1e-9);
    }

    #[test]
    fn adam_rejects_bad_input() {
        assert!(Adam::new(AdamConfig::new(0.0, 0.9, 0.9), &[]).is_err());
        assert!(Adam::new(AdamConfig::new(0.1, 1.0, 0.9), &[]).is_err());
        let mut adam = Adam::new(AdamConfig::new(0.1, 0.9, 0.9), &[[1, 1]]).unwrap();
        let mut p = one(0.0);
        assert!(adam.step(&mut [&mut p], &[Tensor::zeros(2, 1)]).is_err());
    }

    #[test]
    fn ema_examples() {
        let zero = one(0.0);
        let mut ema = Ema::new(0.99, &[&zero]).unwrap();
        ema.update(&[&one(1.0)]).unwrap();
        assert!((ema.shadow()[0].item() - 0.01).abs() < 1e-15);

        let p = one(3.25);
        let mut fixed = Ema::new(0.9, &[&p]).unwrap();
        fixed.update(&[&p]).unwrap();
        assert_eq!(fixed.shadow()[0].item(), 3.25);
    }

    #[test]
    fn ema_geometric_series() {
        let (decay, c, k) = (0.95, 2.0, 37);
        let zero = one(0.0);
        let mut ema = Ema::new(decay, &[&zero]).unwrap();
        for _ in 0..k {
            ema.update(&[&one(c)]).unwrap();
        }
        let want = c * (1.0 - f64::powi(decay, k));
        assert!((ema.shadow()[0].item() - want).abs() < 1e-12);
    }

    #[test]
    fn ema_rejects_bad_decay() {
        assert!(Ema::new(1.0, &[]).is_err());
        assert!(Ema::new(0.0, &[]).is_err());
    }

    #[test]
    fn schedule_halves_at_milestones() {
        let m = [30, 50];
        assert_eq!(lr_schedule_value(1e-3, 10, &m), 1e-3);
        assert_eq!(lr_schedule_value(1e-3, 40, &m), 5e-4);
        assert_eq!(lr_schedule_value(1e-3, 60, &m), 2.5e-4);
        assert_eq!(lr_schedule_value(1e-3, 60, &[]), 1e-3);
    }

    #[test]
    fn fraction_milestones() {
        assert_eq!(milestones_at_fractions(100, &[0.3, 0.5, 0.75]), vec![30, 50, 75]);
        assert_eq!(milestones_at_fractions(2, &[0.3, 0.5, 0.75]), vec![1, 2]);
    }
}
