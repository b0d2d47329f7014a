//! Empirical checks on trained or random models.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::autoencoder::AutoencoderPair;
use super::LsdmError;
use crate::data::PairedSet;
use crate::engine::{lipschitz_upper_bound, Network, Tensor};
use crate::ot::w1::euclidean;
use crate::ot::{w1_exact_equal, EmpiricalSample, OtError};

/// Slack allowed on the inequality checks.
pub const CHECK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskDecomposition {
    /// `W1({(x_i, y_i)}, {(x_i, ĝ_i)})`.
    pub joint_w1: f64,
    /// `(1/n) Σ ‖y_i − D(E(y_i))‖`.
    pub recon_term: f64,
    /// `W1({(x_i, ĝ_i)}, {(x_i, D(E(y_i)))})`.
    pub matched_w1: f64,
    /// `joint_w1 ≤ recon_term + matched_w1` up to [`CHECK_TOL`].
    pub holds: bool,
}

impl RiskDecomposition {
    pub fn slack(&self) -> f64 {
        self.recon_term + self.matched_w1 - self.joint_w1
    }
}

fn joint(x: &Tensor, y: &Tensor) -> Result<EmpiricalSample, LsdmError> {
    Ok(EmpiricalSample::new(x.hcat(y)?)?)
}

/// Splits the joint test error of generated responses `generated[i] = G(x_i, η_i)`
/// into a reconstruction term and a matching term.
pub fn risk_decomposition(ae: &AutoencoderPair, test: &PairedSet, generated: &Tensor) -> Result<RiskDecomposition, LsdmError> {
    if test.is_empty() {
        return Err(LsdmError::EmptyData);
    }
    let recon = ae.reconstruct(&test.y)?;
    let real = joint(&test.x, &test.y)?;
    let fake = joint(&test.x, generated)?;
    let rec = joint(&test.x, &recon)?;
    let joint_w1 = w1_exact_equal(&real, &fake)?.0;
    let matched_w1 = w1_exact_equal(&fake, &rec)?.0;
    let recon_term = test.y.row_iter().zip(recon.row_iter()).map(|(a, b)| euclidean(a, b)).sum::<f64>() / test.len() as f64;
    Ok(RiskDecomposition {
        joint_w1,
        recon_term,
        matched_w1,
        holds: joint_w1 <= recon_term + matched_w1 + CHECK_TOL,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzTransfer {
    pub w1_latent: f64,
    pub w1_decoded: f64,
    pub k_hat: f64,
    /// `w1_decoded ≤ max(1, K̂)·w1_latent` up to a relative [`CHECK_TOL`].
    pub holds: bool,
}

/// Compares latent and decoded W1 through the decoder's certified Lipschitz bound.
pub fn lipschitz_transfer_check(
    decoder: &Network,
    latent_a: &EmpiricalSample,
    latent_b: &EmpiricalSample,
) -> Result<LipschitzTransfer, LsdmError> {
    let k_hat = lipschitz_upper_bound(decoder)?;
    let w1_latent = w1_exact_equal(latent_a, latent_b)?.0;
    let da = EmpiricalSample::new(decoder.forward(latent_a.points())?)?;
    let db = EmpiricalSample::new(decoder.forward(latent_b.points())?)?;
    let w1_decoded = w1_exact_equal(&da, &db)?.0;
    let rhs = k_hat.max(1.0) * w1_latent;
    Ok(LipschitzTransfer {
        w1_latent,
        w1_decoded,
        k_hat,
        holds: w1_decoded <= rhs + CHECK_TOL * rhs.max(1.0),
    })
}

/// Encoded responses plus a uniform grid over their bounding box
/// (`grid` points per axis when `m = 1`, fewer per axis in higher dimensions).
pub fn latent_probes(encoded: &Tensor, grid: usize) -> Result<EmpiricalSample, LsdmError> {
    if encoded.rows() == 0 {
        return Err(OtError::Empty.into());
    }
    let m = encoded.cols();
    let per_axis = ((grid as f64).powf(1.0 / m as f64).ceil() as usize).max(2);
    let lo: Vec<f64> = (0..m).map(|c| (0..encoded.rows()).map(|r| encoded.get(r, c)).fold(f64::INFINITY, f64::min)).collect();
    let hi: Vec<f64> = (0..m).map(|c| (0..encoded.rows()).map(|r| encoded.get(r, c)).fold(f64::NEG_INFINITY, f64::max)).collect();
    let mut data = encoded.data().to_vec();
    let total = per_axis.pow(m as u32);
    for k in 0..total {
        let mut rest = k;
        for c in 0..m {
            let i = rest % per_axis;
            rest /= per_axis;
            let t = i as f64 / (per_axis - 1) as f64;
            data.push(lo[c] * (1.0 - t) + hi[c] * t);
        }
    }
    Ok(EmpiricalSample::new(Tensor::new(encoded.rows() + total, m, data)?)?)
}

/// `max_z support_dist(D(z))` over the probe set.
pub fn range_proximity(
    decoder: &Network,
    probes: &EmpiricalSample,
    support_dist: impl Fn(&[f64]) -> f64,
) -> Result<f64, LsdmError> {
    let decoded = decoder.forward(probes.points())?;
    Ok(decoded.row_iter().map(support_dist).fold(0.0, f64::max))
}

/// Conditional quantile generator for a one-dimensional latent: `x` is binned
/// into equal-width cells over `[lo, hi]` and `H*(x, η)` is the empirical
/// quantile of the latents in `x`'s cell at level `Φ(η)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileOracle {
    lo: f64,
    hi: f64,
    cells: Vec<Vec<f64>>,
}

/// Builds the oracle from paired `(x_i, z_i)`.
pub fn quantile_oracle_generator(x: &[f64], z: &[f64], bins: usize, range: (f64, f64)) -> Result<QuantileOracle, LsdmError> {
    if x.len() != z.len() {
        return Err(OtError::CountMismatch(x.len(), z.len()).into());
    }
    if bins == 0 || !(range.1 > range.0) {
        return Err(LsdmError::InvalidConfig("quantile oracle needs bins ≥ 1 and lo < hi".into()));
    }
    let mut oracle = QuantileOracle {
        lo: range.0,
        hi: range.1,
        cells: vec![Vec::new(); bins],
    };
    for (&xi, &zi) in x.iter().zip(z) {
        let c = oracle.cell(xi);
        oracle.cells[c].push(zi);
    }
    for (i, cell) in oracle.cells.iter_mut().enumerate() {
        if cell.is_empty() {
            return Err(LsdmError::EmptyCell(i));
        }
        cell.sort_by(f64::total_cmp);
    }
    Ok(oracle)
}

impl QuantileOracle {
    pub fn bins(&self) -> usize {
        self.cells.len()
    }

    pub fn cell(&self, x: f64) -> usize {
        let k = self.cells.len();
        let pos = ((x - self.lo) / (self.hi - self.lo) * k as f64).floor();
        (pos.max(0.0) as usize).min(k - 1)
    }

    /// `F⁻¹_cell(Φ(η))` with the empirical quantile `z_(⌈u k⌉)`.
    pub fn sample(&self, x: f64, eta: f64) -> f64 {
        let cell = &self.cells[self.cell(x)];
        let u = Normal::new(0.0, 1.0).expect("standard normal").cdf(eta);
        let k = cell.len();
        let idx = ((u * k as f64).ceil() as usize).clamp(1, k) - 1;
        cell[idx]
    }

    pub fn generate(&self, x: &[f64], eta: &[f64]) -> Vec<f64> {
        x.iter().zip(eta).map(|(&xi, &e)| self.sample(xi, e)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{Activation, Init, MlpSpec};
    use crate::rng::Rng;

    fn linear(scale: f64, dim_in: usize, dim_out: usize) -> Network {
        let w = Tensor::new(dim_out, dim_in, (0..dim_in * dim_out).map(|k| if k % (dim_in + 1) == 0 { scale } else { 0.0 }).collect()).unwrap();
        Network::from_parts(vec![dim_in, dim_out], vec![Activation::Linear], vec![w], vec![Tensor::zeros(1, dim_out)]).unwrap()
    }

    #[test]
    fn lipschitz_transfer_doubling_decoder() {
        let a = EmpiricalSample::from_values(&[0.0]).unwrap();
        let b = EmpiricalSample::from_values(&[1.0]).unwrap();
        let r = lipschitz_transfer_check(&linear(2.0, 1, 1), &a, &b).unwrap();
        assert_eq!((r.w1_latent, r.w1_decoded), (1.0, 2.0));
        assert!((r.k_hat - 2.0).abs() < 1e-15);
        assert!(r.holds);
    }

    #[test]
    fn identity_pipeline_has_zero_risk() {
        let id = || Network::build(&MlpSpec::new(&[1, 1], Activation::Linear, Activation::Linear).with_init(Init::Identity), &mut Rng::new(0)).unwrap();
        let ae = AutoencoderPair::from_networks(id(), id()).unwrap();
        let test = PairedSet {
            x: Tensor::column(&[0.0, 1.0]),
            y: Tensor::column(&[0.0, 1.0]),
        };
        let r = risk_decomposition(&ae, &test, &Tensor::column(&[0.0, 1.0])).unwrap();
        assert_eq!((r.joint_w1, r.recon_term, r.matched_w1), (0.0, 0.0, 0.0));
        assert!(r.holds);
    }

    #[test]
    fn range_proximity_constant_decoders() {
        let probes = EmpiricalSample::from_values(&[-1.0, 0.0, 2.0]).unwrap();
        let circle = |y: &[f64]| (y[0].hypot(y[1]) - 1.0).abs();
        let constant = |v: [f64; 2]| {
            Network::from_parts(
                vec![1, 2],
                vec![Activation::Linear],
                vec![Tensor::zeros(2, 1)],
                vec![Tensor::row_vector(&v)],
            )
            .unwrap()
        };
        assert_eq!(range_proximity(&constant([1.0, 0.0]), &probes, circle).unwrap(), 0.0);
        assert_eq!(range_proximity(&constant([0.0, 0.0]), &probes, circle).unwrap(), 1.0);
    }

    #[test]
    fn probes_cover_the_range() {
        let enc = Tensor::column(&[0.2, -0.5, 0.9]);
        let p = latent_probes(&enc, 5).unwrap();
        assert_eq!(p.len(), 8);
        assert_eq!(p.point(3), &[-0.5]);
        assert_eq!(p.point(7), &[0.9]);
        assert!(latent_probes(&Tensor::zeros(0, 1), 5).is_err());
    }

    #[test]
    fn oracle_point_masses() {
        let x = [0.1, 0.1, 0.7, 0.7, 0.7];
        let z = [0.1, 0.1, 0.7, 0.7, 0.7];
        let oracle = quantile_oracle_generator(&x, &z, 2, (0.0, 1.0)).unwrap();
        for eta in [-3.0, 0.0, 2.5] {
            assert_eq!(oracle.sample(0.1, eta), 0.1);
            assert_eq!(oracle.sample(0.7, eta), 0.7);
        }
    }

    #[test]
    fn oracle_gaussian_quantiles() {
        let std = Normal::new(0.0, 1.0).unwrap();
        let k = 100_000;
        let (mu, sigma) = (0.3, 0.5);
        let z: Vec<f64> = (0..k).map(|i| mu + sigma * std.inverse_cdf((i as f64 + 0.5) / k as f64)).collect();
        let x = vec![0.5; k];
        let oracle = quantile_oracle_generator(&x, &z, 1, (0.0, 1.0)).unwrap();
        for eta in [-2.0, -0.3, 0.0, 1.1, 2.2] {
            assert!((oracle.sample(0.5, eta) - (mu + sigma * eta)).abs() < 1e-3);
        }
    }

    #[test]
    fn oracle_errors() {
        assert!(matches!(
            quantile_oracle_generator(&[0.1], &[0.0], 2, (0.0, 1.0)),
            Err(LsdmError::EmptyCell(1))
        ));
        assert!(quantile_oracle_generator(&[0.1], &[], 2, (0.0, 1.0)).is_err());
    }
}
