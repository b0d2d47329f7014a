//! Conditional latent diffusion: denoising score matching on latent codes and
//! an Euler–Maruyama sampler for the reverse OU process.
//!
//! The forward process is `dZ = −½Z dt + dW`, so `Z_t | Z_0 ~ N(e^{−t/2} Z_0,
//! (1 − e^{−t}) I)`.

mod sampler;
mod score;
mod train;

pub use sampler::{em_sample, em_step, score_bound_report, ScoreBoundReport};
pub(crate) use score::score_from_document;
pub use score::{
    load_score_net, save_score_net, AnalyticScore, Score, ScoreNet, TimeEmbedding, TrainedScore, SCORE_KIND,
};
pub use train::{draw_dsm, dsm_loss, dsm_loss_value, dsm_objective, train_score_net, DiffusionHistory, DsmDraw};

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::engine::checkpoint::CheckpointError;
use crate::engine::{AdamConfig, EngineError};
use crate::ot::OtError;

#[derive(Debug, thiserror::Error)]
pub enum DiffusionError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Ot(#[from] OtError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("negative diffusion time {0}")]
    NegativeTime(f64),
    #[error("no data")]
    EmptyData,
    #[error("non-finite {what} at step {step}")]
    NonFinite { what: &'static str, step: usize },
}

/// `(e^{−t/2}, 1 − e^{−t})`: mean scale and variance of `Z_t | Z_0`.
pub fn ou_marginal(t: f64) -> Result<(f64, f64), DiffusionError> {
    if !(t >= 0.0) {
        return Err(DiffusionError::NegativeTime(t));
    }
    let a = (-0.5 * t).exp();
    Ok((a, -(-t).exp_m1()))
}

/// Per-sample weight on the denoising residual `‖s + ξ/σ_t‖²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossWeighting {
    /// Unit weight.
    Uniform,
    /// `σ_t²`, i.e. squared error on the predicted noise.
    Variance,
    /// `σ_t⁴ e^{t}`, i.e. squared error on the predicted clean latent.
    Denoiser,
    /// `σ_t² e^{t}`: noise error at small `t`, clean-latent error at large `t`.
    Balanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionConfig {
    /// Horizon `T`.
    pub horizon: f64,
    /// Euler–Maruyama steps; `Δ = T / steps`.
    pub steps: usize,
    pub epochs: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    /// Epoch fractions where the learning rate halves.
    pub milestones: Vec<f64>,
    /// Training times are drawn from `U(t_min, T]`.
    pub t_min: f64,
    /// Weighting used for training; [`dsm_loss`] always reports the unweighted loss.
    pub weighting: LossWeighting,
    pub hidden: Vec<usize>,
    /// Number of time-embedding frequencies; the embedding has twice as many features.
    pub frequencies: usize,
    pub x_scale: f64,
    pub ema_decay: f64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            horizon: 5.0,
            steps: 200,
            epochs: 300,
            batch: 64,
            adam: AdamConfig::new(1e-3, 0.9, 0.999),
            milestones: vec![0.5, 0.75],
            t_min: 1e-3,
            weighting: LossWeighting::Balanced,
            hidden: vec![64, 64],
            frequencies: 8,
            x_scale: PI,
            ema_decay: 0.995,
        }
    }
}

impl DiffusionConfig {
    pub fn delta(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn validate(&self) -> Result<(), DiffusionError> {
        let bad = |m: &str| Err(DiffusionError::InvalidConfig(m.into()));
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return bad("horizon must be positive");
        }
        if self.steps == 0 {
            return bad("steps must be at least 1");
        }
        if self.batch == 0 {
            return bad("batch must be positive");
        }
        if !(self.t_min > 0.0 && self.t_min < self.horizon) {
            return bad("t_min must lie in (0, horizon)");
        }
        if self.frequencies == 0 {
            return bad("need at least one embedding frequency");
        }
        if !(self.x_scale > 0.0) {
            return bad("x_scale must be positive");
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad("ema_decay must lie in [0, 1)");
        }
        if self.milestones.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return bad("milestones are epoch fractions in [0, 1]");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marginal_values() {
        assert_eq!(ou_marginal(0.0).unwrap(), (1.0, 0.0));
        let (a, v) = ou_marginal(4f64.ln()).unwrap();
        assert!((a - 0.5).abs() < 1e-15 && (v - 0.75).abs() < 1e-15);
        let (a, v) = ou_marginal(50.0).unwrap();
        assert!(a < 1e-10 && (v - 1.0).abs() < 1e-10);
        assert!(matches!(ou_marginal(-1e-9), Err(DiffusionError::NegativeTime(_))));
        assert!(ou_marginal(f64::NAN).is_err());
    }

    #[test]
    fn config_checks() {
        assert!(DiffusionConfig::default().validate().is_ok());
        assert_eq!(DiffusionConfig::default().delta(), 0.025);
        for cfg in [
            DiffusionConfig { horizon: 0.0, ..Default::default() },
            DiffusionConfig { steps: 0, ..Default::default() },
            DiffusionConfig { t_min: 0.0, ..Default::default() },
            DiffusionConfig { frequencies: 0, ..Default::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }
}
