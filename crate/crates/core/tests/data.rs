use std::f64::consts::PI;

use statrs::distribution::{ContinuousCDF, Normal};

use lsdm::data::{dist_to_circle_support, sample_circle_model, CircleModelConfig};
use lsdm::Rng;

/// Two-sided one-sample Kolmogorov–Smirnov statistic.
fn ks(mut v: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn circle_model_marginals() {
    let cfg = CircleModelConfig {
        n: 2000,
        unpaired: 2000,
        c1: 0.3,
        c2: 0.2,
        ..Default::default()
    };
    let data = sample_circle_model(&cfg, &Rng::new(12)).unwrap();
    let n = cfg.n as f64;
    // 1% critical value.
    let crit = 1.63 / n.sqrt();

    let x = data.paired.x.data().to_vec();
    assert!(ks(x.clone(), |v| (v / PI).clamp(0.0, 1.0)) < crit);

    let noise = Normal::new(0.0, cfg.sigma).unwrap();
    let resid: Vec<f64> = data
        .paired
        .y
        .row_iter()
        .zip(&x)
        .map(|(y, xi)| {
            let d = y[0].atan2(y[1]) - xi;
            (d + PI).rem_euclid(2.0 * PI) - PI
        })
        .collect();
    assert!(ks(resid, |v| noise.cdf(v)) < crit);

    for y in data.paired.y.row_iter() {
        assert!(dist_to_circle_support(y, 0.0) < 1e-12);
    }
    for y in data.unpaired.y.row_iter() {
        assert!(dist_to_circle_support(y, 0.3) < 1e-12);
    }
    // Unpaired angles are shifted by c2 on average (circular mean).
    let (s, c) = data.unpaired.y.row_iter().fold((0.0, 0.0), |(s, c), y| (s + y[0] - 0.3, c + y[1] - 0.3));
    let mean_angle = s.atan2(c);
    assert!((mean_angle - (PI / 2.0 + 0.2)).abs() < 0.1, "{mean_angle}");
}

#[test]
fn paired_split_ignores_unpaired_settings() {
    let a = sample_circle_model(&CircleModelConfig::default(), &Rng::new(4)).unwrap();
    let b = sample_circle_model(
        &CircleModelConfig {
            unpaired: 10,
            c1: 0.5,
            c2: 1.0,
            ..Default::default()
        },
        &Rng::new(4),
    )
    .unwrap();
    assert_eq!(a.paired, b.paired);
    assert_eq!(a.test, b.test);
}
