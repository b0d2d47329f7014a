use serde::{Deserialize, Serialize};

use super::DataError;
use crate::engine::Tensor;
use crate::rng::Rng;

/// Isotropic Gaussian component `weight · N(mean, var·I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub var: f64,
}

/// `Z | X = levels[k]` is a Gaussian mixture; `X` is uniform over the levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalMixture {
    levels: Vec<f64>,
    components: Vec<Vec<Component>>,
    dim: usize,
}

impl ConditionalMixture {
    pub fn new(levels: Vec<f64>, components: Vec<Vec<Component>>) -> Result<Self, DataError> {
        let bad = |m: String| Err(DataError::InvalidConfig(m));
        if levels.is_empty() || levels.len() != components.len() {
            return bad(format!("{} levels, {} component lists", levels.len(), components.len()));
        }
        let dim = match components[0].first() {
            Some(c) => c.mean.len(),
            None => return bad("empty component list".into()),
        };
        for comps in &components {
            let total: f64 = comps.iter().map(|c| c.weight).sum();
            if comps.is_empty() || (total - 1.0).abs() > 1e-12 {
                return bad(format!("component weights sum to {total}"));
            }
            if comps.iter().any(|c| c.mean.len() != dim || !(c.var >= 0.0) || !(c.weight > 0.0)) {
                return bad("components need a common dimension, var ≥ 0 and weight > 0".into());
            }
        }
        Ok(Self { levels, components, dim })
    }

    /// One Gaussian per level: `Z | X = levels[k] ~ N(means[k], var·I)`.
    pub fn gaussian(levels: Vec<f64>, means: Vec<Vec<f64>>, var: f64) -> Result<Self, DataError> {
        let comps = means
            .into_iter()
            .map(|mean| vec![Component { weight: 1.0, mean, var }])
            .collect();
        Self::new(levels, comps)
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self, level: usize) -> &[Component] {
        &self.components[level]
    }

    pub fn level_index(&self, x: f64) -> Option<usize> {
        self.levels.iter().position(|&l| (l - x).abs() <= 1e-12)
    }

    pub fn sample_at(&self, level: usize, count: usize, rng: &mut Rng) -> Tensor {
        let comps = &self.components[level];
        let mut out = Vec::with_capacity(count * self.dim);
        for _ in 0..count {
            let u = rng.uniform();
            let mut acc = 0.0;
            let mut pick = comps.len() - 1;
            for (k, c) in comps.iter().enumerate() {
                acc += c.weight;
                if u < acc {
                    pick = k;
                    break;
                }
            }
            let c = &comps[pick];
            let sd = c.var.sqrt();
            out.extend(c.mean.iter().map(|m| m + sd * rng.normal()));
        }
        Tensor::new(count, self.dim, out).expect("sized above")
    }

    /// `count` pairs with `X` uniform over the levels; returns `(x, z)`.
    pub fn sample(&self, count: usize, rng: &mut Rng) -> (Tensor, Tensor) {
        let mut xs = Vec::with_capacity(count);
        let mut zs = Vec::with_capacity(count * self.dim);
        for _ in 0..count {
            let k = rng.index(self.levels.len());
            xs.push(self.levels[k]);
            zs.extend_from_slice(self.sample_at(k, 1, rng).data());
        }
        (Tensor::column(&xs), Tensor::new(count, self.dim, zs).expect("sized above"))
    }

    /// `∇_z log p_t(z | x)` after running `dZ = −½Z dt + dW` for time `t`
    /// from the conditional law at `level`.
    pub fn ou_score(&self, level: usize, z: &[f64], t: f64) -> Vec<f64> {
        let a = (-t / 2.0).exp();
        let noise = -(-t).exp_m1();
        let comps = &self.components[level];
        // Log responsibilities, then a softmax.
        let parts: Vec<(f64, f64, Vec<f64>)> = comps
            .iter()
            .map(|c| {
                let s = c.var * a * a + noise;
                let diff: Vec<f64> = z.iter().zip(&c.mean).map(|(zi, mi)| zi - a * mi).collect();
                let sq: f64 = diff.iter().map(|d| d * d).sum();
                let logw = c.weight.ln() - 0.5 * self.dim as f64 * s.ln() - 0.5 * sq / s;
                (logw, s, diff)
            })
            .collect();
        let top = parts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let norm: f64 = parts.iter().map(|p| (p.0 - top).exp()).sum();
        let mut score = vec![0.0; self.dim];
        for (logw, s, diff) in &parts {
            let r = (logw - top).exp() / norm;
            for (o, d) in score.iter_mut().zip(diff) {
                *o -= r * d / s;
            }
        }
        score
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_score_closed_form() {
        let mix = ConditionalMixture::gaussian(vec![0.0, 1.0], vec![vec![-1.0], vec![2.0]], 0.25).unwrap();
        for &t in &[0.01, 0.5, 3.0] {
            for &z in &[-1.0, 0.3, 2.5] {
                let a = f64::exp(-t / 2.0);
                let want = -(z - 2.0 * a) / (0.25 * f64::exp(-t) + 1.0 - f64::exp(-t));
                let got = mix.ou_score(1, &[z], t)[0];
                assert!((got - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mixture_score_matches_log_density_difference() {
        let comps = vec![
            Component { weight: 0.3, mean: vec![-1.0, 0.5], var: 0.1 },
            Component { weight: 0.7, mean: vec![1.0, 0.0], var: 0.4 },
        ];
        let mix = ConditionalMixture::new(vec![0.0], vec![comps.clone()]).unwrap();
        let t = 0.7;
        let log_density = |z: &[f64]| -> f64 {
            let a = f64::exp(-t / 2.0);
            comps
                .iter()
                .map(|c| {
                    let s = c.var * a * a + 1.0 - f64::exp(-t);
                    let sq: f64 = z.iter().zip(&c.mean).map(|(zi, m)| (zi - a * m).powi(2)).sum();
                    c.weight * (-0.5 * sq / s).exp() / (2.0 * std::f64::consts::PI * s)
                })
                .sum::<f64>()
                .ln()
        };
        let z = [0.2, -0.3];
        let h = 1e-6;
        let score = mix.ou_score(0, &z, t);
        for i in 0..2 {
            let mut up = z;
            let mut down = z;
            up[i] += h;
            down[i] -= h;
            let fd = (log_density(&up) - log_density(&down)) / (2.0 * h);
            assert!((fd - score[i]).abs() < 1e-6, "{fd} vs {}", score[i]);
        }
    }

    #[test]
    fn sample_moments() {
        let mix = ConditionalMixture::gaussian(vec![0.0], vec![vec![1.5]], 0.25).unwrap();
        let z = mix.sample_at(0, 20_000, &mut Rng::new(4));
        let mean = z.sum() / 20_000.0;
        let var = z.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 20_000.0;
        assert!((mean - 1.5).abs() < 0.02);
        assert!((var - 0.25).abs() < 0.02);
    }

    #[test]
    fn rejects_bad_weights() {
        let comps = vec![vec![Component { weight: 0.5, mean: vec![0.0], var: 1.0 }]];
        assert!(ConditionalMixture::new(vec![0.0], comps).is_err());
    }
}
