//! f-divergences between histograms on a common finite support, and the
//! W1 ≤ 2·diam·max{D, √(D/2)} bound check.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::w1::{union_support, w1_1d_weighted, DiscreteDist1D};
use super::OtError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DivergenceKind {
    Kl,
    Js,
    Chi2,
    Tv,
    Hellinger2,
}

impl DivergenceKind {
    pub const ALL: [DivergenceKind; 5] = [
        DivergenceKind::Kl,
        DivergenceKind::Js,
        DivergenceKind::Chi2,
        DivergenceKind::Tv,
        DivergenceKind::Hellinger2,
    ];

    /// Convex generator `f` with `f(1) = 0`.
    pub fn generator(self, t: f64) -> f64 {
        match self {
            DivergenceKind::Kl => xlogx(t),
            DivergenceKind::Js => 0.5 * (xlogx(t) - (t + 1.0) * ((t + 1.0) / 2.0).ln()),
            DivergenceKind::Chi2 => (t - 1.0).powi(2),
            DivergenceKind::Tv => 0.5 * (t - 1.0).abs(),
            DivergenceKind::Hellinger2 => (t.sqrt() - 1.0).powi(2),
        }
    }

    /// `lim_{t→∞} f(t)/t`; infinite for KL and χ².
    fn slope_at_infinity(self) -> f64 {
        match self {
            DivergenceKind::Kl | DivergenceKind::Chi2 => f64::INFINITY,
            DivergenceKind::Js => 0.5 * std::f64::consts::LN_2,
            DivergenceKind::Tv => 0.5,
            DivergenceKind::Hellinger2 => 1.0,
        }
    }
}

fn xlogx(t: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        t * t.ln()
    }
}

impl fmt::Display for DivergenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DivergenceKind::Kl => "kl",
            DivergenceKind::Js => "js",
            DivergenceKind::Chi2 => "chi2",
            DivergenceKind::Tv => "tv",
            DivergenceKind::Hellinger2 => "hellinger2",
        };
        f.write_str(s)
    }
}

impl FromStr for DivergenceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DivergenceKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown divergence {s:?}"))
    }
}

/// Probabilities over a finite support shared by position.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    probs: Vec<f64>,
}

impl Histogram {
    pub fn new(probs: Vec<f64>) -> Result<Self, OtError> {
        if probs.is_empty() {
            return Err(OtError::Empty);
        }
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(OtError::NonFinite);
        }
        let total: f64 = probs.iter().sum();
        if probs.iter().any(|&p| p < 0.0) || (total - 1.0).abs() > super::w1::NORMALIZATION_TOL {
            return Err(OtError::Unnormalized(total));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// `D_f(p ‖ q) = Σ_i q_i f(p_i / q_i)`, with `0·f(0/0) = 0` and
/// `0·f(p/0) = p·lim f(t)/t`. KL is `Σ p ln(p/q)`, JS is in nats, TV is
/// `½ Σ |p − q|`.
pub fn f_divergence(p: &Histogram, q: &Histogram, kind: DivergenceKind) -> Result<f64, OtError> {
    if p.probs.len() != q.probs.len() {
        return Err(OtError::SupportMismatch(format!(
            "{} vs {} bins",
            p.probs.len(),
            q.probs.len()
        )));
    }
    let mut total = 0.0;
    for (i, (&pi, &qi)) in p.probs.iter().zip(&q.probs).enumerate() {
        total += if qi > 0.0 {
            qi * kind.generator(pi / qi)
        } else if pi > 0.0 {
            let slope = kind.slope_at_infinity();
            if slope.is_infinite() {
                return Err(OtError::AbsoluteContinuity { kind, bin: i });
            }
            pi * slope
        } else {
            0.0
        };
    }
    Ok(total.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub w1: f64,
    pub divergence: f64,
    pub diameter: f64,
    pub bound: f64,
    pub holds: bool,
}

impl BoundCheck {
    pub fn slack(&self) -> f64 {
        self.bound - self.w1
    }
}

pub const BOUND_TOL: f64 = 1e-12;

/// Checks `W1(p, q) ≤ 2·diam(Ω)·max{D_f(p‖q), √(D_f(p‖q)/2)}` with Ω the union support.
pub fn divergence_bound_check(
    p: &DiscreteDist1D,
    q: &DiscreteDist1D,
    kind: DivergenceKind,
) -> Result<BoundCheck, OtError> {
    let grid = union_support(p, q);
    let diameter = grid[grid.len() - 1] - grid[0];
    let ph = Histogram::new(p.on_grid(&grid))?;
    let qh = Histogram::new(q.on_grid(&grid))?;
    let divergence = f_divergence(&ph, &qh, kind)?;
    let w1 = w1_1d_weighted(p, q);
    let bound = 2.0 * diameter * divergence.max((divergence / 2.0).sqrt());
    Ok(BoundCheck {
        w1,
        divergence,
        diameter,
        bound,
        holds: w1 <= bound + BOUND_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bern(p: f64) -> Histogram {
        Histogram::new(vec![1.0 - p, p]).unwrap()
    }

    /// Closed forms, written independently of the generator route.
    fn closed_form(p: &[f64], q: &[f64], kind: DivergenceKind) -> f64 {
        let pairs = p.iter().zip(q);
        match kind {
            DivergenceKind::Kl => pairs.map(|(a, b)| if *a > 0.0 { a * (a / b).ln() } else { 0.0 }).sum(),
            DivergenceKind::Js => pairs
                .map(|(a, b)| {
                    let m = 0.5 * (a + b);
                    let t = |x: f64| if x > 0.0 { x * (x / m).ln() } else { 0.0 };
                    0.5 * (t(*a) + t(*b))
                })
                .sum(),
            DivergenceKind::Chi2 => pairs.map(|(a, b)| (a - b).powi(2) / b).sum(),
            DivergenceKind::Tv => 0.5 * pairs.map(|(a, b)| (a - b).abs()).sum::<f64>(),
            DivergenceKind::Hellinger2 => pairs.map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2)).sum(),
        }
    }

    #[test]
    fn self_divergence_is_zero() {
        let p = Histogram::new(vec![0.2, 0.0, 0.8]).unwrap();
        for kind in DivergenceKind::ALL {
            assert_eq!(f_divergence(&p, &p, kind).unwrap(), 0.0, "{kind}");
        }
    }

    #[test]
    fn bernoulli_values() {
        let kl = f_divergence(&bern(0.5), &bern(0.6), DivergenceKind::Kl).unwrap();
        assert!((kl - 0.020411).abs() < 1e-6);
        let chi2 = f_divergence(&bern(0.5), &bern(0.6), DivergenceKind::Chi2).unwrap();
        assert!((chi2 - 0.0416667).abs() < 1e-6);
        let tv = f_divergence(&bern(0.5), &bern(0.6), DivergenceKind::Tv).unwrap();
        assert!((tv - 0.1).abs() < 1e-15);
    }

    #[test]
    fn generator_route_matches_closed_forms() {
        let mut rng = crate::rng::Rng::new(5);
        for _ in 0..200 {
            let raw_p: Vec<f64> = (0..6).map(|_| rng.uniform() + 0.01).collect();
            let raw_q: Vec<f64> = (0..6).map(|_| rng.uniform() + 0.01).collect();
            let (sp, sq): (f64, f64) = (raw_p.iter().sum(), raw_q.iter().sum());
            let p: Vec<f64> = raw_p.iter().map(|v| v / sp).collect();
            let q: Vec<f64> = raw_q.iter().map(|v| v / sq).collect();
            let (hp, hq) = (Histogram::new(p.clone()).unwrap(), Histogram::new(q.clone()).unwrap());
            for kind in DivergenceKind::ALL {
                let got = f_divergence(&hp, &hq, kind).unwrap();
                let want = closed_form(&p, &q, kind);
                assert!((got - want).abs() < 1e-12, "{kind}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn zero_mass_conventions() {
        let p = Histogram::new(vec![1.0, 0.0]).unwrap();
        let q = Histogram::new(vec![0.0, 1.0]).unwrap();
        assert!(matches!(
            f_divergence(&p, &q, DivergenceKind::Kl),
            Err(OtError::AbsoluteContinuity { bin: 0, .. })
        ));
        assert!(f_divergence(&p, &q, DivergenceKind::Chi2).is_err());
        let js = f_divergence(&p, &q, DivergenceKind::Js).unwrap();
        assert!((js - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(f_divergence(&p, &q, DivergenceKind::Tv).unwrap(), 1.0);
        assert_eq!(f_divergence(&p, &q, DivergenceKind::Hellinger2).unwrap(), 2.0);
        let short = Histogram::new(vec![1.0]).unwrap();
        assert!(matches!(f_divergence(&p, &short, DivergenceKind::Tv), Err(OtError::SupportMismatch(_))));
    }

    #[test]
    fn bound_examples() {
        let p = DiscreteDist1D::new(vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
        let same = divergence_bound_check(&p, &p, DivergenceKind::Kl).unwrap();
        assert_eq!((same.w1, same.bound), (0.0, 0.0));
        assert!(same.holds);

        let q = DiscreteDist1D::new(vec![0.0, 1.0], vec![0.4, 0.6]).unwrap();
        let tv = divergence_bound_check(&p, &q, DivergenceKind::Tv).unwrap();
        assert!((tv.w1 - 0.1).abs() < 1e-15);
        assert_eq!(tv.diameter, 1.0);
        let want = 2.0 * f64::max(0.1, 0.05f64.sqrt());
        assert!((tv.bound - want).abs() < 1e-12);
        assert!((tv.bound - 0.4472).abs() < 1e-4);
        assert!(tv.holds);
    }

    #[test]
    fn names_round_trip() {
        for kind in DivergenceKind::ALL {
            assert_eq!(kind.to_string().parse::<DivergenceKind>().unwrap(), kind);
        }
    }
}
