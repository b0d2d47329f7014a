use lsdm::diffusion::{
    em_sample, score_bound_report, train_score_net, AnalyticScore, DiffusionConfig, Score, ScoreNet,
};
use lsdm::engine::{AdamConfig, Tensor};
use lsdm::Rng;

/// `X ~ U(0, 3)`, `Z | X ~ N(X − 1, 0.25)`.
fn gaussian_pairs(n: usize, rng: &mut Rng) -> (Tensor, Tensor) {
    let x: Vec<f64> = (0..n).map(|_| rng.uniform_range(0.0, 3.0)).collect();
    let z: Vec<f64> = x.iter().map(|xi| xi - 1.0 + 0.5 * rng.normal()).collect();
    (Tensor::column(&x), Tensor::column(&z))
}

fn gaussian_score() -> AnalyticScore {
    AnalyticScore::gaussian(1, 0.25, |x| vec![x[0] - 1.0])
}

// Probes sit within two marginal standard deviations of the diffused mean.
fn probe_mse(score: &dyn Score, exact: &dyn Score) -> f64 {
    let (mut zs, mut xs, mut ts) = (Vec::new(), Vec::new(), Vec::new());
    for &x in &[0.25f64, 1.0, 1.75, 2.5] {
        for &t in &[0.05f64, 0.2, 0.5, 1.0, 2.0, 4.0] {
            let a = (-0.5 * t).exp();
            let sd = (0.25 * a * a + 1.0 - a * a).sqrt();
            for k in -4..=4 {
                zs.push((x - 1.0) * a + 0.5 * k as f64 * sd);
                xs.push(x);
                ts.push(t);
            }
        }
    }
    let z = Tensor::column(&zs);
    let x = Tensor::column(&xs);
    let a = score.score(&z, &x, &ts).unwrap();
    let b = exact.score(&z, &x, &ts).unwrap();
    a.data().iter().zip(b.data()).map(|(u, v)| (u - v).powi(2)).sum::<f64>() / zs.len() as f64
}

#[test]
fn learns_a_gaussian_conditional_score() {
    let mut rng = Rng::new(1);
    let (x, z) = gaussian_pairs(1000, &mut rng);
    let cfg = DiffusionConfig {
        epochs: 600,
        ..Default::default()
    };
    let trained = train_score_net(&x, &z, &cfg, &rng.child("train")).unwrap();
    let mse = probe_mse(&trained.score, &gaussian_score());
    assert!(mse <= 0.1, "probe mse {mse}");
}

#[test]
fn point_masses_concentrate() {
    let levels = [0.0, 1.0, 2.0, 3.0];
    let centers = [-1.0, 0.5, 1.5, -0.5];
    let n = 400;
    let x: Vec<f64> = (0..n).map(|i| levels[i % 4]).collect();
    let z: Vec<f64> = (0..n).map(|i| centers[i % 4]).collect();
    let cfg = DiffusionConfig {
        epochs: 1000,
        adam: AdamConfig::new(3e-3, 0.9, 0.999),
        ..Default::default()
    };
    let trained = train_score_net(&Tensor::column(&x), &Tensor::column(&z), &cfg, &Rng::new(3)).unwrap();
    // The last Euler step injects noise of size sqrt(Δ), so sample on a finer grid.
    let fine = DiffusionConfig { steps: 2000, ..cfg };
    let gen = em_sample(&trained.score, &Tensor::column(&levels), 500, &fine, &mut Rng::new(4)).unwrap();
    for (k, chunk) in gen.data().chunks(500).enumerate() {
        let mean = chunk.iter().sum::<f64>() / 500.0;
        let sd = (chunk.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 499.0).sqrt();
        assert!(sd <= 0.1, "level {k} sd {sd}");
        assert!((mean - centers[k]).abs() < 0.1, "level {k} mean {mean}");
    }
}

fn moving_average(v: &[f64], w: usize) -> Vec<f64> {
    v.windows(w).map(|s| s.iter().sum::<f64>() / w as f64).collect()
}

#[test]
fn training_loss_trends_down() {
    for seed in 0..5 {
        let mut rng = Rng::new(100 + seed);
        let (x, z) = gaussian_pairs(256, &mut rng);
        let cfg = DiffusionConfig {
            epochs: 60,
            ..Default::default()
        };
        let trained = train_score_net(&x, &z, &cfg, &rng).unwrap();
        let ma = moving_average(&trained.history.loss, 10);
        assert!(ma.last().unwrap() < ma.first().unwrap(), "seed {seed}: {ma:?}");
    }
}

#[test]
fn short_horizon_matches_worse() {
    let exact = gaussian_score();
    let mut rng = Rng::new(7);
    let (x, z) = gaussian_pairs(500, &mut rng);
    let w = |horizon: f64| {
        let cfg = DiffusionConfig {
            horizon,
            steps: 200,
            ..Default::default()
        };
        score_bound_report(&exact, &x, &z, &cfg, Some(&exact), &mut Rng::new(8)).unwrap()
    };
    let (short, long) = (w(0.5), w(5.0));
    assert!(short.measured_w1 > long.measured_w1, "{short:?} vs {long:?}");
    assert!(short.bound > long.bound);
}

#[test]
fn training_improves_joint_match() {
    let exact = gaussian_score();
    for seed in 0..5 {
        let mut rng = Rng::new(200 + seed);
        let (x, z) = gaussian_pairs(300, &mut rng);
        let cfg = DiffusionConfig {
            epochs: 150,
            ..Default::default()
        };
        let untrained = ScoreNet::build(1, 1, &cfg, &mut rng.child("score/init")).unwrap();
        let trained = train_score_net(&x, &z, &cfg, &rng).unwrap();
        let before = score_bound_report(&untrained, &x, &z, &cfg, Some(&exact), &mut Rng::new(seed)).unwrap();
        let after = score_bound_report(&trained.score, &x, &z, &cfg, Some(&exact), &mut Rng::new(seed)).unwrap();
        assert!(after.measured_w1 < before.measured_w1, "seed {seed}: {before:?} vs {after:?}");
        assert!(after.l_sm < before.l_sm);
    }
}
