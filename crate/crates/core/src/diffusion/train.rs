use serde::{Deserialize, Serialize};

use super::score::{Score, ScoreNet, TrainedScore};
use super::{ou_marginal, DiffusionConfig, DiffusionError, LossWeighting};
use crate::engine::optim::milestones_at_fractions;
use crate::engine::{lr_schedule_value, Adam, BoundMlp, Ema, Graph, NodeId, Tensor};
use crate::rng::Rng;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiffusionHistory {
    /// Mean denoising loss per epoch.
    pub loss: Vec<f64>,
}

/// One noising of a latent batch: `z_t = e^{−t/2} z_0 + σ_t ξ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DsmDraw {
    pub t: Vec<f64>,
    pub xi: Tensor,
    pub zt: Tensor,
    /// `−ξ / σ_t`, the regression target for the score.
    pub target: Tensor,
}

impl DsmDraw {
    pub fn at_times(z0: &Tensor, t: Vec<f64>, rng: &mut Rng) -> Result<Self, DiffusionError> {
        if t.len() != z0.rows() {
            return Err(DiffusionError::InvalidConfig("one time per latent row".into()));
        }
        let m = z0.cols();
        let xi = Tensor::new(z0.rows(), m, rng.normal_vec(z0.rows() * m))?;
        let mut zt = z0.clone();
        let mut target = xi.clone();
        for (i, &ti) in t.iter().enumerate() {
            let (a, v) = ou_marginal(ti)?;
            let s = v.sqrt();
            let xr = xi.row(i).to_vec();
            for (k, &e) in xr.iter().enumerate() {
                zt.set(i, k, a * z0.get(i, k) + s * e);
                target.set(i, k, -e / s);
            }
        }
        Ok(Self { t, xi, zt, target })
    }
}

/// Noises `z0` at times drawn from `U(t_min, T)`.
pub fn draw_dsm(z0: &Tensor, cfg: &DiffusionConfig, rng: &mut Rng) -> Result<DsmDraw, DiffusionError> {
    let t = (0..z0.rows()).map(|_| rng.uniform_range(cfg.t_min, cfg.horizon)).collect();
    DsmDraw::at_times(z0, t, rng)
}

/// `mean_i ‖s(z_t, x, t) + ξ/σ_t‖²` for a fixed draw.
pub fn dsm_loss_value(score: &dyn Score, x: &Tensor, draw: &DsmDraw) -> Result<f64, DiffusionError> {
    let s = score.score(&draw.zt, x, &draw.t)?;
    let total: f64 = s.data().iter().zip(draw.target.data()).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(total / s.rows().max(1) as f64)
}

/// The loss as a graph node over the network's bound parameters, optionally
/// reweighted per sample.
pub fn dsm_objective(
    g: &mut Graph,
    score: &ScoreNet,
    bound: &BoundMlp,
    x: &Tensor,
    draw: &DsmDraw,
    weighting: LossWeighting,
) -> Result<NodeId, DiffusionError> {
    let s = score.forward_graph(g, bound, &draw.zt, x, &draw.t)?;
    let target = g.constant(draw.target.clone());
    let mut r = g.sub(s, target);
    let root_weight = |t: f64| {
        let var = -(-t).exp_m1();
        match weighting {
            LossWeighting::Uniform => 1.0,
            LossWeighting::Variance => var.sqrt(),
            LossWeighting::Denoiser => var * (0.5 * t).exp(),
            LossWeighting::Balanced => (var * t.exp()).sqrt(),
        }
    };
    if weighting != LossWeighting::Uniform {
        let w: Vec<f64> = draw.t.iter().map(|&t| root_weight(t)).collect();
        let w = g.constant(Tensor::column(&w));
        r = g.mul_col(r, w);
    }
    let sq = g.square(r);
    let total = g.sum_all(sq);
    Ok(g.scale(total, 1.0 / draw.zt.rows().max(1) as f64))
}

/// Fresh draw plus loss value.
pub fn dsm_loss(
    score: &dyn Score,
    z0: &Tensor,
    x: &Tensor,
    cfg: &DiffusionConfig,
    rng: &mut Rng,
) -> Result<f64, DiffusionError> {
    let draw = draw_dsm(z0, cfg, rng)?;
    let v = dsm_loss_value(score, x, &draw)?;
    if !v.is_finite() {
        return Err(DiffusionError::NonFinite { what: "denoising loss", step: 0 });
    }
    Ok(v)
}

/// Fits a conditional score network to pairs `(x_i, z_i)` by denoising score matching.
pub fn train_score_net(x: &Tensor, z: &Tensor, cfg: &DiffusionConfig, rng: &Rng) -> Result<TrainedScore, DiffusionError> {
    cfg.validate()?;
    let n = z.rows();
    if n == 0 {
        return Err(DiffusionError::EmptyData);
    }
    if x.rows() != n {
        return Err(DiffusionError::InvalidConfig(format!("{} predictors for {n} latents", x.rows())));
    }
    // Fewer pairs than a batch: train full-batch.
    let batch = cfg.batch.min(n);
    let mut score = ScoreNet::build(z.cols(), x.cols(), cfg, &mut rng.child("score/init"))?;
    let mut adam = Adam::new(cfg.adam, &score.net.param_shapes())?;
    let mut ema = Ema::new(cfg.ema_decay, &score.net.params())?;
    let milestones = milestones_at_fractions(cfg.epochs, &cfg.milestones);
    let mut batch_rng = rng.child("score/batches");
    let mut noise_rng = rng.child("score/noise");
    let mut history = DiffusionHistory::default();
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        adam.set_lr(lr_schedule_value(cfg.adam.lr, epoch, &milestones));
        let order = batch_rng.permutation(n);
        let mut total = 0.0;
        let mut count = 0;
        for idx in order.chunks_exact(batch) {
            let xb = x.select_rows(idx);
            let draw = draw_dsm(&z.select_rows(idx), cfg, &mut noise_rng)?;
            let mut g = Graph::new();
            let bound = score.net.bind(&mut g);
            let loss = dsm_objective(&mut g, &score, &bound, &xb, &draw, cfg.weighting)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(DiffusionError::NonFinite { what: "denoising loss", step });
            }
            let grads = g.grad_values(loss, &bound.params())?;
            adam.step(&mut score.net.params_mut(), &grads)?;
            ema.update(&score.net.params())?;
            total += value;
            count += 1;
            step += 1;
        }
        history.loss.push(total / count as f64);
    }

    score.net.set_params(ema.shadow())?;
    Ok(TrainedScore {
        score,
        config: cfg.clone(),
        history,
        seed: rng.seed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::AnalyticScore;

    #[test]
    fn zero_score_loss_at_fixed_time() {
        // With s ≡ 0 the loss is ‖ξ‖²/σ², whose mean is m / (1 − e^{−t}).
        let zero = AnalyticScore::new(2, |_, _, _| vec![0.0, 0.0]);
        let n = 20_000;
        let z0 = Tensor::zeros(n, 2);
        let x = Tensor::zeros(n, 1);
        let t = 0.7;
        let draw = DsmDraw::at_times(&z0, vec![t; n], &mut Rng::new(5)).unwrap();
        let v = dsm_loss_value(&zero, &x, &draw).unwrap();
        let expected = 2.0 / (1.0 - (-t as f64).exp());
        // Standard error is about 4.2 / sqrt(n) ≈ 0.03.
        assert!((v - expected).abs() < 0.12, "{v} vs {expected}");
    }

    #[test]
    fn true_stationary_score_beats_zero() {
        let n = 10_000;
        let mut rng = Rng::new(11);
        let z0 = Tensor::new(n, 1, rng.normal_vec(n)).unwrap();
        let x = Tensor::zeros(n, 1);
        let draw = draw_dsm(&z0, &DiffusionConfig::default(), &mut rng).unwrap();
        let zero = AnalyticScore::new(1, |_, _, _| vec![0.0]);
        let exact = AnalyticScore::stationary(1);
        let a = dsm_loss_value(&exact, &x, &draw).unwrap();
        let b = dsm_loss_value(&zero, &x, &draw).unwrap();
        assert!(a < b, "{a} vs {b}");
    }

    #[test]
    fn objective_gradient_matches_differences() {
        let cfg = DiffusionConfig {
            hidden: vec![6],
            frequencies: 2,
            ..Default::default()
        };
        let mut rng = Rng::new(2);
        let mut score = ScoreNet::build(2, 1, &cfg, &mut rng).unwrap();
        let z0 = Tensor::new(5, 2, rng.normal_vec(10)).unwrap();
        let x = Tensor::column(&[0.1, 0.5, 1.0, 2.0, 3.0]);
        let draw = draw_dsm(&z0, &cfg, &mut rng).unwrap();
        let mut g = Graph::new();
        let b = score.net.bind(&mut g);
        let weighted = dsm_objective(&mut g, &score, &b, &x, &draw, LossWeighting::Variance).unwrap();
        let loss = dsm_objective(&mut g, &score, &b, &x, &draw, LossWeighting::Uniform).unwrap();
        assert!((g.value(loss).item() - dsm_loss_value(&score, &x, &draw).unwrap()).abs() < 1e-12);
        assert!(g.value(weighted).item() < g.value(loss).item());
        let grads = g.grad_values(loss, &b.params()).unwrap();

        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for (pi, grad) in grads.iter().enumerate() {
            for k in 0..grad.data().len() {
                let mut eval = |delta: f64| {
                    score.net.params_mut()[pi].data_mut()[k] += delta;
                    let v = dsm_loss_value(&score, &x, &draw).unwrap();
                    score.net.params_mut()[pi].data_mut()[k] -= delta;
                    v
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let an = grad.data()[k];
                worst = worst.max((fd - an).abs() / an.abs().max(1e-3));
            }
        }
        assert!(worst < 1e-4, "relative error {worst}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = DiffusionConfig { batch: 8, ..Default::default() };
        let rng = Rng::new(0);
        let few = DiffusionConfig { epochs: 2, ..cfg.clone() };
        assert!(train_score_net(&Tensor::zeros(4, 1), &Tensor::zeros(4, 1), &few, &rng).is_ok());
        assert!(train_score_net(&Tensor::zeros(9, 1), &Tensor::zeros(8, 1), &cfg, &rng).is_err());
        assert!(matches!(
            train_score_net(&Tensor::zeros(0, 1), &Tensor::zeros(0, 1), &cfg, &rng),
            Err(DiffusionError::EmptyData)
        ));
    }
}
