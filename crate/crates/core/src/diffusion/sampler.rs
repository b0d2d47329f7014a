use serde::{Deserialize, Serialize};

use super::score::Score;
use super::train::{draw_dsm, dsm_loss_value};
use super::{DiffusionConfig, DiffusionError};
use crate::engine::Tensor;
use crate::ot::{w1_exact_equal, EmpiricalSample};
use crate::rng::Rng;

/// One reverse step `z + (½z + s(z, x, τ))Δ + η√Δ`, where `τ = T − t` is the
/// forward time the score is evaluated at.
pub fn em_step(score: &dyn Score, z: &Tensor, x: &Tensor, tau: f64, delta: f64, eta: &Tensor) -> Result<Tensor, DiffusionError> {
    let s = score.score(z, x, &vec![tau; z.rows()])?;
    let root = delta.sqrt();
    let mut out = z.clone();
    for ((o, si), e) in out.data_mut().iter_mut().zip(s.data()).zip(eta.data()) {
        *o += (0.5 * *o + si) * delta + e * root;
    }
    Ok(out)
}

/// Runs the discretised reverse process from `η_0 ~ N(0, I)`, `count` chains
/// per row of `x` (grouped by row). Step `n` evaluates the score at
/// `T − nΔ`, so the first step sees time `T` and the last sees `Δ`.
pub fn em_sample(
    score: &dyn Score,
    x: &Tensor,
    count: usize,
    cfg: &DiffusionConfig,
    rng: &mut Rng,
) -> Result<Tensor, DiffusionError> {
    cfg.validate()?;
    let m = score.latent_dim();
    let idx: Vec<usize> = (0..x.rows()).flat_map(|r| std::iter::repeat_n(r, count)).collect();
    let xr = x.select_rows(&idx);
    let rows = idx.len();
    let delta = cfg.delta();
    let mut z = Tensor::new(rows, m, rng.normal_vec(rows * m))?;
    for n in 0..cfg.steps {
        let eta = Tensor::new(rows, m, rng.normal_vec(rows * m))?;
        z = em_step(score, &z, &xr, cfg.horizon - n as f64 * delta, delta, &eta)?;
        if !z.all_finite() {
            return Err(DiffusionError::NonFinite { what: "sampler state", step: n });
        }
    }
    Ok(z)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBoundReport {
    /// Score-matching error estimate (see `from_reference`).
    pub l_sm: f64,
    /// `true`: `l_sm` is `E‖s − s_ref‖²` against a known score. `false`: it is
    /// the denoising loss, which exceeds the score-matching error by a constant.
    pub from_reference: bool,
    /// `(T · l_sm)^{1/4} + e^{−T/2}`.
    pub bound: f64,
    /// Exact W1 between `{(x_i, z_i)}` and `{(x_i, H_s(x_i, η_i))}`.
    pub measured_w1: f64,
}

const SCORE_PROBES: usize = 4000;

/// Score-matching error, the resulting rate bound and the measured joint W1.
pub fn score_bound_report(
    score: &dyn Score,
    x: &Tensor,
    z: &Tensor,
    cfg: &DiffusionConfig,
    reference: Option<&dyn Score>,
    rng: &mut Rng,
) -> Result<ScoreBoundReport, DiffusionError> {
    let n = z.rows();
    if n == 0 {
        return Err(DiffusionError::EmptyData);
    }
    let reps = SCORE_PROBES.div_ceil(n);
    let idx: Vec<usize> = (0..reps).flat_map(|_| 0..n).collect();
    let (xr, zr) = (x.select_rows(&idx), z.select_rows(&idx));
    let draw = draw_dsm(&zr, cfg, rng)?;
    let l_sm = match reference {
        Some(r) => {
            let a = score.score(&draw.zt, &xr, &draw.t)?;
            let b = r.score(&draw.zt, &xr, &draw.t)?;
            a.data().iter().zip(b.data()).map(|(u, v)| (u - v).powi(2)).sum::<f64>() / idx.len() as f64
        }
        None => dsm_loss_value(score, &xr, &draw)?,
    };
    let generated = em_sample(score, x, 1, cfg, rng)?;
    let real = EmpiricalSample::new(x.hcat(z)?)?;
    let fake = EmpiricalSample::new(x.hcat(&generated)?)?;
    let measured_w1 = w1_exact_equal(&real, &fake)?.0;
    Ok(ScoreBoundReport {
        l_sm,
        from_reference: reference.is_some(),
        bound: (cfg.horizon * l_sm).powf(0.25) + (-0.5 * cfg.horizon).exp(),
        measured_w1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::AnalyticScore;

    fn moments(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        (mean, v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0))
    }

    #[test]
    fn single_step_by_hand() {
        let score = AnalyticScore::new(2, |z, x, t| vec![z[0] * t + x[0], -z[1] * t]);
        let cfg = DiffusionConfig {
            horizon: 0.8,
            steps: 1,
            ..Default::default()
        };
        let x = Tensor::column(&[1.5]);
        let out = em_sample(&score, &x, 1, &cfg, &mut Rng::new(3)).unwrap();
        let mut rng = Rng::new(3);
        let e0 = rng.normal_vec(2);
        let e1 = rng.normal_vec(2);
        let d: f64 = 0.8;
        let s = [e0[0] * 0.8 + 1.5, -e0[1] * 0.8];
        for k in 0..2 {
            let hand = e0[k] + (0.5 * e0[k] + s[k]) * d + e1[k] * d.sqrt();
            assert_eq!(out.data()[k], hand);
        }
    }

    #[test]
    fn nested_steps_reproduce_sampler() {
        let score = AnalyticScore::new(1, |z, x, t| vec![-z[0] + x[0] * (-t).exp()]);
        let cfg = DiffusionConfig {
            horizon: 2.0,
            steps: 7,
            ..Default::default()
        };
        let x = Tensor::column(&[0.3, -1.0]);
        let out = em_sample(&score, &x, 2, &cfg, &mut Rng::new(8)).unwrap();
        let mut rng = Rng::new(8);
        let xr = x.select_rows(&[0, 0, 1, 1]);
        let mut z = Tensor::new(4, 1, rng.normal_vec(4)).unwrap();
        for n in 0..7 {
            let eta = Tensor::new(4, 1, rng.normal_vec(4)).unwrap();
            z = em_step(&score, &z, &xr, 2.0 - n as f64 * cfg.delta(), cfg.delta(), &eta).unwrap();
        }
        assert_eq!(out, z);
        assert_eq!(out, em_sample(&score, &x, 2, &cfg, &mut Rng::new(8)).unwrap());
    }

    #[test]
    fn stationary_score_keeps_unit_gaussian() {
        let cfg = DiffusionConfig::default();
        let x = Tensor::zeros(1, 1);
        let z = em_sample(&AnalyticScore::stationary(1), &x, 10_000, &cfg, &mut Rng::new(21)).unwrap();
        let (mean, var) = moments(z.data());
        assert!(mean.abs() <= 0.05, "mean {mean}");
        assert!((0.9..=1.1).contains(&var), "variance {var}");
    }

    fn gaussian_target() -> AnalyticScore {
        AnalyticScore::gaussian(1, 0.25, |x| vec![x[0] - 1.0])
    }

    #[test]
    fn gaussian_conditional_is_recovered() {
        let cfg = DiffusionConfig::default();
        let mut rng = Rng::new(4);
        let n = 1000;
        let x = Tensor::new(n, 1, (0..n).map(|_| rng.uniform_range(0.0, 3.0)).collect()).unwrap();
        let oracle: Vec<f64> = x.data().iter().map(|xi| xi - 1.0 + 0.5 * rng.normal()).collect();
        let z = Tensor::column(&oracle);
        let gen = em_sample(&gaussian_target(), &x, 1, &cfg, &mut rng).unwrap();
        let a = EmpiricalSample::new(x.hcat(&z).unwrap()).unwrap();
        let b = EmpiricalSample::new(x.hcat(&gen).unwrap()).unwrap();
        let w = w1_exact_equal(&a, &b).unwrap().0;
        assert!(w <= 0.1, "joint W1 {w}");
    }

    #[test]
    fn exact_score_report() {
        let mut rng = Rng::new(6);
        let n = 400;
        let x = Tensor::new(n, 1, (0..n).map(|_| rng.uniform_range(0.0, 3.0)).collect()).unwrap();
        let z = Tensor::column(&x.data().iter().map(|xi| xi - 1.0 + 0.5 * rng.normal()).collect::<Vec<_>>());
        let target = gaussian_target();
        let long = DiffusionConfig {
            horizon: 10.0,
            steps: 400,
            ..Default::default()
        };
        let r = score_bound_report(&target, &x, &z, &long, Some(&target), &mut rng).unwrap();
        assert_eq!(r.l_sm, 0.0);
        assert!((r.bound - (-5f64).exp()).abs() < 1e-15);
        assert!(r.measured_w1 <= 0.1 + 0.05, "{r:?}");
    }
}
