use serde::{Deserialize, Serialize};

use super::LsdmError;
use crate::engine::optim::milestones_at_fractions;
use crate::engine::{lr_schedule_value, Activation, Adam, AdamConfig, Graph, MlpSpec, Network, NodeId, Tensor};
use crate::ot::assignment::{hungarian, CostMatrix};
use crate::ot::w1::euclidean;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepOneConfig {
    pub epochs: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    /// Learning-rate halving points as fractions of `epochs`.
    pub milestones: Vec<f64>,
    /// Weight of the W1 penalty between encoded batches and standard Gaussian batches.
    pub wae_lambda: f64,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    /// Negative slope of the hidden leaky ReLUs.
    pub slope: f64,
}

impl Default for StepOneConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch: 64,
            adam: AdamConfig::new(1e-3, 0.9, 0.999),
            milestones: vec![0.3, 0.5, 0.75],
            wae_lambda: 0.0,
            latent_dim: 1,
            hidden: vec![64, 64],
            slope: 0.2,
        }
    }
}

impl StepOneConfig {
    pub fn validate(&self) -> Result<(), LsdmError> {
        let bad = |m: &str| Err(LsdmError::InvalidConfig(format!("step one: {m}")));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch == 0 || (self.wae_lambda > 0.0 && self.batch < 2) {
            return bad("batch must be ≥ 1, and ≥ 2 with a WAE penalty");
        }
        if !(self.wae_lambda >= 0.0) {
            return bad("wae_lambda must be ≥ 0");
        }
        if self.latent_dim == 0 {
            return bad("latent_dim must be ≥ 1");
        }
        Ok(())
    }
}

/// Encoder `E: R^q → R^m` (tanh output) and decoder `D: R^m → R^q` (linear output).
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderPair {
    pub encoder: Network,
    pub decoder: Network,
}

impl AutoencoderPair {
    pub fn build(response_dim: usize, cfg: &StepOneConfig, rng: &Rng) -> Result<Self, LsdmError> {
        let hidden = Activation::LeakyRelu(cfg.slope);
        let m = cfg.latent_dim;
        let enc_dims: Vec<usize> = [response_dim].into_iter().chain(cfg.hidden.iter().copied()).chain([m]).collect();
        let dec_dims: Vec<usize> = [m].into_iter().chain(cfg.hidden.iter().copied()).chain([response_dim]).collect();
        let encoder = Network::build(&MlpSpec::new(&enc_dims, hidden, Activation::Tanh), &mut rng.child("encoder"))?;
        let decoder = Network::build(&MlpSpec::new(&dec_dims, hidden, Activation::Linear), &mut rng.child("decoder"))?;
        Self::from_networks(encoder, decoder)
    }

    pub fn from_networks(encoder: Network, decoder: Network) -> Result<Self, LsdmError> {
        if encoder.output_dim() != decoder.input_dim() || encoder.input_dim() != decoder.output_dim() {
            return Err(LsdmError::InvalidConfig(format!(
                "encoder {}→{} does not fit decoder {}→{}",
                encoder.input_dim(),
                encoder.output_dim(),
                decoder.input_dim(),
                decoder.output_dim()
            )));
        }
        Ok(Self { encoder, decoder })
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn response_dim(&self) -> usize {
        self.decoder.output_dim()
    }

    pub fn encode(&self, y: &Tensor) -> Result<Tensor, LsdmError> {
        Ok(self.encoder.forward(y)?)
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor, LsdmError> {
        Ok(self.decoder.forward(z)?)
    }

    pub fn reconstruct(&self, y: &Tensor) -> Result<Tensor, LsdmError> {
        self.decode(&self.encode(y)?)
    }

    /// `(1/n) Σ ‖y_i − D(E(y_i))‖₂`.
    pub fn recon_error(&self, y: &Tensor) -> Result<f64, LsdmError> {
        if y.rows() == 0 {
            return Err(LsdmError::EmptyData);
        }
        let yh = self.reconstruct(y)?;
        let total: f64 = y.row_iter().zip(yh.row_iter()).map(|(a, b)| euclidean(a, b)).sum();
        Ok(total / y.rows() as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepOneHistory {
    /// Mean per-batch reconstruction loss, one entry per epoch.
    pub recon: Vec<f64>,
    /// Mean per-batch assignment W1 between encoded and prior batches.
    pub latent_w1: Vec<f64>,
}

/// Assignment W1 between the encoded batch (a graph node) and a prior batch.
///
/// The optimal matching is computed on the current values and then held
/// fixed, so the gradient is `Σ (e_i − z_π(i)) / (n ‖e_i − z_π(i)‖)`, the
/// envelope gradient of the W1 value.
pub fn wae_penalty(g: &mut Graph, encoded: NodeId, prior: &Tensor) -> Result<(NodeId, f64), LsdmError> {
    let enc = g.value(encoded).clone();
    if enc.rows() != prior.rows() {
        return Err(crate::ot::OtError::CountMismatch(enc.rows(), prior.rows()).into());
    }
    if enc.cols() != prior.cols() {
        return Err(crate::ot::OtError::Dim(format!("{} vs {}", enc.cols(), prior.cols())).into());
    }
    if enc.rows() < 2 {
        return Err(LsdmError::InvalidConfig("the WAE penalty needs at least two points".into()));
    }
    let cost = CostMatrix::from_fn(enc.rows(), |i, j| euclidean(enc.row(i), prior.row(j)));
    let perm = hungarian(&cost);
    let value = cost.total(&perm) / enc.rows() as f64;
    let matched = g.constant(prior.select_rows(&perm));
    let diff = g.sub(encoded, matched);
    let norms = g.row_norm(diff);
    Ok((g.mean(norms), value))
}

/// Minimizes `(1/B) Σ ‖y_i − D(E(y_i))‖₂ + λ·W1(E(y_batch), prior_batch)` with Adam.
pub fn train_autoencoder(
    y_all: &Tensor,
    cfg: &StepOneConfig,
    rng: &Rng,
) -> Result<(AutoencoderPair, StepOneHistory), LsdmError> {
    cfg.validate()?;
    let n = y_all.rows();
    if n == 0 {
        return Err(LsdmError::EmptyData);
    }
    if n < cfg.batch {
        return Err(LsdmError::InvalidConfig(format!("{n} responses for batch {}", cfg.batch)));
    }
    let mut ae = AutoencoderPair::build(y_all.cols(), cfg, &rng.child("ae/init"))?;
    let mut shapes = ae.encoder.param_shapes();
    shapes.extend(ae.decoder.param_shapes());
    let mut adam = Adam::new(cfg.adam, &shapes)?;
    let milestones = milestones_at_fractions(cfg.epochs, &cfg.milestones);
    let mut order_rng = rng.child("ae/batches");
    let mut prior_rng = rng.child("ae/prior");
    let (b, m) = (cfg.batch, cfg.latent_dim);
    let steps = n / b;
    let mut history = StepOneHistory::default();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        adam.set_lr(lr_schedule_value(cfg.adam.lr, epoch, &milestones));
        let perm = order_rng.permutation(n);
        let (mut recon_sum, mut w1_sum) = (0.0, 0.0);
        for chunk in perm.chunks_exact(b).take(steps) {
            let y = y_all.select_rows(chunk);
            let prior = Tensor::new(b, m, prior_rng.normal_vec(b * m))?;
            let mut g = Graph::new();
            let enc = ae.encoder.bind(&mut g);
            let dec = ae.decoder.bind(&mut g);
            let yn = g.constant(y);
            let z = enc.forward(&mut g, yn)?;
            let yh = dec.forward(&mut g, z)?;
            let diff = g.sub(yh, yn);
            let norms = g.row_norm(diff);
            let recon = g.mean(norms);
            let (penalty, batch_w1) = if b >= 2 {
                wae_penalty(&mut g, z, &prior)?
            } else {
                (recon, f64::NAN)
            };
            let loss = if cfg.wae_lambda > 0.0 {
                let weighted = g.scale(penalty, cfg.wae_lambda);
                g.add(recon, weighted)
            } else {
                recon
            };
            if !g.value(loss).item().is_finite() {
                return Err(LsdmError::NonFinite {
                    stage: "autoencoder",
                    what: "loss",
                    step,
                });
            }
            recon_sum += g.value(recon).item();
            w1_sum += batch_w1;
            let mut wrt = enc.params();
            wrt.extend(dec.params());
            let grads = g.grad_values(loss, &wrt)?;
            let mut params = ae.encoder.params_mut();
            params.extend(ae.decoder.params_mut());
            adam.step(&mut params, &grads)?;
            step += 1;
        }
        history.recon.push(recon_sum / steps as f64);
        if b >= 2 {
            history.latent_w1.push(w1_sum / steps as f64);
        }
    }
    Ok((ae, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::{w1_exact_equal, EmpiricalSample};

    #[test]
    fn penalty_value_and_gradient_under_shift() {
        let prior = Tensor::column(&[0.0, 1.0, 3.0, 4.5]);
        let c = -0.4;
        let mut g = Graph::new();
        let e = g.leaf(prior.map(|v| v + c));
        let (p, value) = wae_penalty(&mut g, e, &prior).unwrap();
        assert!((value - 0.4).abs() < 1e-15);
        assert!((g.value(p).item() - 0.4).abs() < 1e-15);
        let grad = g.grad_values(p, &[e]).unwrap();
        for &gv in grad[0].data() {
            assert!((gv - (-1.0 / 4.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn penalty_is_zero_on_identical_batches() {
        let prior = Tensor::new(3, 2, vec![0.1, 0.2, -1.0, 0.5, 2.0, 2.0]).unwrap();
        let mut g = Graph::new();
        let e = g.leaf(prior.select_rows(&[2, 0, 1]));
        let (p, value) = wae_penalty(&mut g, e, &prior).unwrap();
        assert_eq!(value, 0.0);
        let grad = g.grad_values(p, &[e]).unwrap();
        assert!(grad[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn penalty_matches_exact_w1_and_finite_differences() {
        let mut rng = Rng::new(17);
        for _ in 0..10 {
            let enc = Tensor::new(8, 2, rng.normal_vec(16)).unwrap();
            let prior = Tensor::new(8, 2, rng.normal_vec(16)).unwrap();
            let mut g = Graph::new();
            let e = g.leaf(enc.clone());
            let (p, value) = wae_penalty(&mut g, e, &prior).unwrap();
            let exact = w1_exact_equal(
                &EmpiricalSample::new(enc.clone()).unwrap(),
                &EmpiricalSample::new(prior.clone()).unwrap(),
            )
            .unwrap()
            .0;
            assert!((value - exact).abs() < 1e-12);
            let grad = g.grad_values(p, &[e]).unwrap().remove(0);
            let h = 1e-6;
            let w1_at = |t: &Tensor| {
                w1_exact_equal(&EmpiricalSample::new(t.clone()).unwrap(), &EmpiricalSample::new(prior.clone()).unwrap())
                    .unwrap()
                    .0
            };
            for k in 0..16 {
                let mut up = enc.clone();
                let mut down = enc.clone();
                up.data_mut()[k] += h;
                down.data_mut()[k] -= h;
                let fd = (w1_at(&up) - w1_at(&down)) / (2.0 * h);
                let an = grad.data()[k];
                assert!((fd - an).abs() <= 1e-4 * an.abs().max(1e-3), "{fd} vs {an}");
            }
        }
    }

    #[test]
    fn penalty_errors() {
        let mut g = Graph::new();
        let e = g.leaf(Tensor::column(&[0.0]));
        assert!(wae_penalty(&mut g, e, &Tensor::column(&[1.0])).is_err());
        let e2 = g.leaf(Tensor::column(&[0.0, 1.0]));
        assert!(wae_penalty(&mut g, e2, &Tensor::column(&[1.0])).is_err());
    }

    #[test]
    fn learns_a_constant() {
        let y = Tensor::new(64, 2, [0.3, -0.7].repeat(64)).unwrap();
        let cfg = StepOneConfig {
            epochs: 200,
            ..Default::default()
        };
        let (ae, hist) = train_autoencoder(&y, &cfg, &Rng::new(0)).unwrap();
        assert_eq!(hist.recon.len(), 200);
        let err = ae.recon_error(&y).unwrap();
        assert!(err <= 1e-3, "{err} {:?}", &hist.recon[190..]);
    }

    #[test]
    fn rejects_bad_input() {
        let cfg = StepOneConfig::default();
        assert!(matches!(
            train_autoencoder(&Tensor::zeros(0, 2), &cfg, &Rng::new(0)),
            Err(LsdmError::EmptyData)
        ));
        assert!(train_autoencoder(&Tensor::zeros(10, 2), &cfg, &Rng::new(0)).is_err());
        let bad = StepOneConfig {
            wae_lambda: 1.0,
            batch: 1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
