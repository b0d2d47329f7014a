use std::f64::consts::{LN_2, PI};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::autoencoder::AutoencoderPair;
use super::bundle::{BundleMeta, GeneratorBundle};
use super::LsdmError;
use crate::data::PairedSet;
use crate::engine::optim::milestones_at_fractions;
use crate::engine::{
    lr_schedule_value, Activation, Adam, AdamConfig, BoundMlp, Ema, Graph, MlpSpec, Network, NodeId, Tensor,
};
use crate::rng::Rng;

macro_rules! text_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s.to_ascii_lowercase().as_str() {
                    $($text => Ok($name::$variant),)+
                    _ => Err(format!(concat!("unknown ", stringify!($name), " {:?}"), s)),
                }
            }
        }
    };
}

/// Where Step 2 matches distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Response space: fakes `D(H(x, η))` against targets `D(E(y))`.
    Clsdm,
    /// Latent space: fakes `H(x, η)` against targets `E(y)`.
    Dlsdm,
}
text_enum!(Variant { Clsdm => "clsdm", Dlsdm => "dlsdm" });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Divergence {
    /// Wasserstein-1 through a gradient-penalised critic.
    W1,
    /// Jensen–Shannon through the non-saturating logistic game.
    Js,
    /// KL through its variational dual `sup E_p f − E_q e^{f−1}`.
    Kl,
}
text_enum!(Divergence { W1 => "w1", Js => "js", Kl => "kl" });

/// Where the critic's input gradient is penalised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GpMode {
    /// Random interpolates `ε z_real + (1 − ε) z_fake`, `ε ~ U(0, 1)` per sample.
    Interpolate,
    /// The real pairs themselves.
    RealPoint,
}
text_enum!(GpMode { Interpolate => "interpolate", RealPoint => "real_point" });

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepTwoConfig {
    pub variant: Variant,
    pub divergence: Divergence,
    /// Critic updates per generator update.
    pub critic_iters: usize,
    pub gp_lambda: f64,
    pub gp_mode: GpMode,
    /// Generator updates.
    pub iterations: usize,
    pub batch: usize,
    pub generator_adam: AdamConfig,
    pub critic_adam: AdamConfig,
    /// Learning-rate halving points as fractions of `iterations`.
    pub milestones: Vec<f64>,
    pub noise_dim: usize,
    pub ema_decay: f64,
    /// Predictors are divided by this before entering any network.
    pub x_scale: f64,
    pub generator_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub slope: f64,
}

impl Default for StepTwoConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Clsdm,
            divergence: Divergence::W1,
            critic_iters: 5,
            gp_lambda: 10.0,
            gp_mode: GpMode::Interpolate,
            iterations: 2000,
            batch: 25,
            generator_adam: AdamConfig::new(3e-4, 0.0, 0.9),
            critic_adam: AdamConfig::new(3e-4, 0.0, 0.9),
            milestones: Vec::new(),
            noise_dim: 2,
            ema_decay: 0.999,
            x_scale: PI,
            generator_hidden: vec![64, 64],
            critic_hidden: vec![128, 128],
            slope: 0.2,
        }
    }
}

impl StepTwoConfig {
    pub fn validate(&self) -> Result<(), LsdmError> {
        let bad = |m: &str| Err(LsdmError::InvalidConfig(format!("step two: {m}")));
        if self.critic_iters == 0 {
            return bad("critic_iters must be ≥ 1");
        }
        if !(self.gp_lambda >= 0.0) {
            return bad("gp_lambda must be ≥ 0");
        }
        if self.batch == 0 {
            return bad("batch must be ≥ 1");
        }
        if !(self.x_scale > 0.0) {
            return bad("x_scale must be positive");
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return bad("ema_decay must be in (0, 1)");
        }
        Ok(())
    }
}

/// `H: R^{p+d} → R^m`, fed `(x / x_scale, η)` with `η ~ N(0, I_d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGenerator {
    pub net: Network,
    pub noise_dim: usize,
    pub x_scale: f64,
}

impl LatentGenerator {
    pub fn build(p: usize, m: usize, cfg: &StepTwoConfig, rng: &mut Rng) -> Result<Self, LsdmError> {
        let dims: Vec<usize> = [p + cfg.noise_dim]
            .into_iter()
            .chain(cfg.generator_hidden.iter().copied())
            .chain([m])
            .collect();
        let spec = MlpSpec::new(&dims, Activation::LeakyRelu(cfg.slope), Activation::Linear);
        Ok(Self {
            net: Network::build(&spec, rng)?,
            noise_dim: cfg.noise_dim,
            x_scale: cfg.x_scale,
        })
    }

    pub fn predictor_dim(&self) -> usize {
        self.net.input_dim() - self.noise_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.net.output_dim()
    }

    fn scaled(&self, x: &Tensor) -> Tensor {
        x.map(|v| v / self.x_scale)
    }

    /// `H(x, η)` row by row.
    pub fn forward(&self, x: &Tensor, eta: &Tensor) -> Result<Tensor, LsdmError> {
        if x.cols() != self.predictor_dim() || eta.cols() != self.noise_dim || x.rows() != eta.rows() {
            return Err(LsdmError::InvalidConfig(format!(
                "generator takes x with {} and η with {} columns, got {:?} and {:?}",
                self.predictor_dim(),
                self.noise_dim,
                x.shape(),
                eta.shape()
            )));
        }
        Ok(self.net.forward(&self.scaled(x).hcat(eta)?)?)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepTwoHistory {
    /// Per-epoch means, where an epoch is `max(1, n / batch)` generator updates.
    pub critic_loss: Vec<f64>,
    pub generator_loss: Vec<f64>,
    /// Critic estimate of the divergence being minimised.
    pub divergence_estimate: Vec<f64>,
    /// Mean `‖∇_{(x,z)} f‖` at the penalised points (W1 only).
    pub grad_norm: Vec<f64>,
}

/// `λ · mean (‖∇_{(x,z)} f(x, ẑ)‖₂ − 1)²` as a graph node, plus the mean norm.
///
/// `x` must already be scaled. The penalty is differentiable in the critic
/// parameters (double backprop).
pub fn gradient_penalty_term(
    g: &mut Graph,
    critic: &BoundMlp,
    x: &Tensor,
    z_real: &Tensor,
    z_fake: &Tensor,
    lambda: f64,
    mode: GpMode,
    rng: &mut Rng,
) -> Result<(NodeId, f64), LsdmError> {
    if x.rows() != z_real.rows() || z_real.shape() != z_fake.shape() {
        return Err(LsdmError::InvalidConfig(format!(
            "penalty batches {:?}, {:?}, {:?} do not align",
            x.shape(),
            z_real.shape(),
            z_fake.shape()
        )));
    }
    let at = match mode {
        GpMode::RealPoint => z_real.clone(),
        GpMode::Interpolate => {
            let mut out = z_fake.clone();
            for r in 0..out.rows() {
                let eps = rng.uniform();
                for c in 0..out.cols() {
                    out.set(r, c, eps * z_real.get(r, c) + (1.0 - eps) * z_fake.get(r, c));
                }
            }
            out
        }
    };
    let input = g.leaf(x.hcat(&at)?);
    let f = critic.forward(g, input)?;
    let grad = g.input_gradient(f, input)?;
    let norms = g.row_norm(grad);
    let mean_norm = g.value(norms).sum() / x.rows() as f64;
    let shifted = g.add_scalar(norms, -1.0);
    let sq = g.square(shifted);
    let mean = g.mean(sq);
    Ok((g.scale(mean, lambda), mean_norm))
}

struct CriticStep {
    loss: NodeId,
    estimate: f64,
    grad_norm: f64,
}

fn critic_objective(
    g: &mut Graph,
    critic: &BoundMlp,
    x: &Tensor,
    z_real: &Tensor,
    z_fake: &Tensor,
    cfg: &StepTwoConfig,
    rng: &mut Rng,
) -> Result<CriticStep, LsdmError> {
    let real = g.constant(x.hcat(z_real)?);
    let fake = g.constant(x.hcat(z_fake)?);
    let fr = critic.forward(g, real)?;
    let ff = critic.forward(g, fake)?;
    let mr = g.mean(fr);
    Ok(match cfg.divergence {
        Divergence::W1 => {
            let mf = g.mean(ff);
            let gap = g.sub(mr, mf);
            let (gp, grad_norm) = gradient_penalty_term(g, critic, x, z_real, z_fake, cfg.gp_lambda, cfg.gp_mode, rng)?;
            let estimate = -g.value(gap).item();
            CriticStep {
                loss: g.add(gap, gp),
                estimate,
                grad_norm,
            }
        }
        Divergence::Js => {
            let nr = g.neg(fr);
            let lr = g.softplus(nr);
            let lr = g.mean(lr);
            let lf = g.softplus(ff);
            let lf = g.mean(lf);
            let loss = g.add(lr, lf);
            let estimate = (2.0 * LN_2 - g.value(loss).item()) / 2.0;
            CriticStep {
                loss,
                estimate,
                grad_norm: f64::NAN,
            }
        }
        Divergence::Kl => {
            let shifted = g.add_scalar(ff, -1.0);
            let e = g.exp(shifted);
            let me = g.mean(e);
            let loss = g.sub(me, mr);
            let estimate = -g.value(loss).item();
            CriticStep {
                loss,
                estimate,
                grad_norm: f64::NAN,
            }
        }
    })
}

fn generator_objective(
    g: &mut Graph,
    h: &BoundMlp,
    decoder: Option<&BoundMlp>,
    critic: &BoundMlp,
    x: &Tensor,
    eta: &Tensor,
    divergence: Divergence,
) -> Result<NodeId, LsdmError> {
    let input = g.constant(x.hcat(eta)?);
    let mut fake = h.forward(g, input)?;
    if let Some(d) = decoder {
        fake = d.forward(g, fake)?;
    }
    let xn = g.constant(x.clone());
    let joint = g.concat_cols(xn, fake);
    let f = critic.forward(g, joint)?;
    Ok(match divergence {
        Divergence::W1 => g.mean(f),
        Divergence::Js => {
            let nf = g.neg(f);
            let sp = g.softplus(nf);
            g.mean(sp)
        }
        Divergence::Kl => {
            let shifted = g.add_scalar(f, -1.0);
            let e = g.exp(shifted);
            let me = g.mean(e);
            g.neg(me)
        }
    })
}

/// Step-2 targets for every paired response: `D(E(y))` or `E(y)`.
fn targets(ae: &AutoencoderPair, y: &Tensor, variant: Variant) -> Result<Tensor, LsdmError> {
    let z = ae.encode(y)?;
    match variant {
        Variant::Clsdm => ae.decode(&z),
        Variant::Dlsdm => Ok(z),
    }
}

fn fakes(ae: &AutoencoderPair, h: &LatentGenerator, x: &Tensor, eta: &Tensor, variant: Variant) -> Result<Tensor, LsdmError> {
    let z = h.forward(x, eta)?;
    match variant {
        Variant::Clsdm => ae.decode(&z),
        Variant::Dlsdm => Ok(z),
    }
}

fn critic_network(in_dim: usize, cfg: &StepTwoConfig, rng: &mut Rng) -> Result<Network, LsdmError> {
    let dims: Vec<usize> = [in_dim].into_iter().chain(cfg.critic_hidden.iter().copied()).chain([1]).collect();
    Ok(Network::build(
        &MlpSpec::new(&dims, Activation::LeakyRelu(cfg.slope), Activation::Linear),
        rng,
    )?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepTwoLosses {
    pub critic: f64,
    pub generator: f64,
}

/// Critic and generator objectives on one batch (`x` unscaled), exactly as
/// the training loop computes them, without updating anything.
#[allow(clippy::too_many_arguments)]
pub fn step_two_losses(
    ae: &AutoencoderPair,
    h: &LatentGenerator,
    critic: &Network,
    x: &Tensor,
    y: &Tensor,
    eta: &Tensor,
    cfg: &StepTwoConfig,
    rng: &mut Rng,
) -> Result<StepTwoLosses, LsdmError> {
    let xs = h.scaled(x);
    let real = targets(ae, y, cfg.variant)?;
    let fake = fakes(ae, h, x, eta, cfg.variant)?;
    let mut g = Graph::new();
    let cb = critic.bind(&mut g);
    let critic_loss = critic_objective(&mut g, &cb, &xs, &real, &fake, cfg, rng)?.loss;
    let mut g2 = Graph::new();
    let hb = h.net.bind(&mut g2);
    let db = match cfg.variant {
        Variant::Clsdm => Some(ae.decoder.bind(&mut g2)),
        Variant::Dlsdm => None,
    };
    let cb2 = critic.bind(&mut g2);
    let gen_loss = generator_objective(&mut g2, &hb, db.as_ref(), &cb2, &xs, eta, cfg.divergence)?;
    Ok(StepTwoLosses {
        critic: g.value(critic_loss).item(),
        generator: g2.value(gen_loss).item(),
    })
}

/// Mean `‖∇_{(x,z)} f‖` of `critic` at interpolates between real and fake
/// batches (`x` already scaled).
pub fn critic_grad_norm(critic: &Network, x: &Tensor, z_real: &Tensor, z_fake: &Tensor, rng: &mut Rng) -> Result<f64, LsdmError> {
    let mut g = Graph::new();
    let cb = critic.bind(&mut g);
    Ok(gradient_penalty_term(&mut g, &cb, x, z_real, z_fake, 1.0, GpMode::Interpolate, rng)?.1)
}

fn check_finite(value: f64, what: &'static str, step: usize) -> Result<(), LsdmError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(LsdmError::NonFinite {
            stage: "latent generator",
            what,
            step,
        })
    }
}

/// Step 2 on the paired data with the autoencoder frozen.
///
/// Each generator update draws one batch and one noise batch, runs
/// `critic_iters` critic updates on it, then one generator update against
/// the updated critic. The returned bundle carries the EMA of the generator
/// weights.
pub fn train_latent_generator(
    paired: &PairedSet,
    ae: &AutoencoderPair,
    cfg: &StepTwoConfig,
    rng: &Rng,
) -> Result<GeneratorBundle, LsdmError> {
    cfg.validate()?;
    let n = paired.len();
    if n == 0 {
        return Err(LsdmError::EmptyData);
    }
    if n < cfg.batch {
        return Err(LsdmError::InvalidConfig(format!("{n} pairs for batch {}", cfg.batch)));
    }
    let p = paired.x.cols();
    let m = ae.latent_dim();
    let mut h = LatentGenerator::build(p, m, cfg, &mut rng.child("gen/init/generator"))?;
    let real_all = targets(ae, &paired.y, cfg.variant)?;
    let mut critic = critic_network(p + real_all.cols(), cfg, &mut rng.child("gen/init/critic"))?;
    let xs_all = h.scaled(&paired.x);

    let mut gen_adam = Adam::new(cfg.generator_adam, &h.net.param_shapes())?;
    let mut critic_adam = Adam::new(cfg.critic_adam, &critic.param_shapes())?;
    let mut ema = Ema::new(cfg.ema_decay, &h.net.params())?;
    let milestones = milestones_at_fractions(cfg.iterations, &cfg.milestones);
    let mut batch_rng = rng.child("gen/batches");
    let mut noise_rng = rng.child("gen/noise");
    let mut gp_rng = rng.child("gen/penalty");

    let b = cfg.batch;
    let per_epoch = (n / b).max(1);
    let mut history = StepTwoHistory::default();
    let mut acc = [0.0; 4];
    let mut in_epoch = 0;
    let mut order = batch_rng.permutation(n);
    let mut pos = 0;

    for it in 0..cfg.iterations {
        gen_adam.set_lr(lr_schedule_value(cfg.generator_adam.lr, it, &milestones));
        critic_adam.set_lr(lr_schedule_value(cfg.critic_adam.lr, it, &milestones));
        if pos + b > n {
            order = batch_rng.permutation(n);
            pos = 0;
        }
        let idx = &order[pos..pos + b];
        pos += b;
        let x = xs_all.select_rows(idx);
        let z_real = real_all.select_rows(idx);
        let eta = Tensor::new(b, cfg.noise_dim, noise_rng.normal_vec(b * cfg.noise_dim))?;
        let xin = x.hcat(&eta)?;
        let z_fake = {
            let lat = h.net.forward(&xin)?;
            match cfg.variant {
                Variant::Clsdm => ae.decode(&lat)?,
                Variant::Dlsdm => lat,
            }
        };

        for _ in 0..cfg.critic_iters {
            let mut g = Graph::new();
            let cb = critic.bind(&mut g);
            let step = critic_objective(&mut g, &cb, &x, &z_real, &z_fake, cfg, &mut gp_rng)?;
            let loss = g.value(step.loss).item();
            check_finite(loss, "critic loss", it)?;
            let grads = g.grad_values(step.loss, &cb.params())?;
            critic_adam.step(&mut critic.params_mut(), &grads)?;
            acc[0] += loss / cfg.critic_iters as f64;
            acc[2] += step.estimate / cfg.critic_iters as f64;
            acc[3] += step.grad_norm / cfg.critic_iters as f64;
        }

        let mut g = Graph::new();
        let hb = h.net.bind(&mut g);
        let db = match cfg.variant {
            Variant::Clsdm => Some(ae.decoder.bind(&mut g)),
            Variant::Dlsdm => None,
        };
        let cb = critic.bind(&mut g);
        let loss = generator_objective(&mut g, &hb, db.as_ref(), &cb, &x, &eta, cfg.divergence)?;
        let value = g.value(loss).item();
        check_finite(value, "generator loss", it)?;
        let grads = g.grad_values(loss, &hb.params())?;
        gen_adam.step(&mut h.net.params_mut(), &grads)?;
        ema.update(&h.net.params())?;
        acc[1] += value;

        in_epoch += 1;
        if in_epoch == per_epoch || it + 1 == cfg.iterations {
            let k = in_epoch as f64;
            history.critic_loss.push(acc[0] / k);
            history.generator_loss.push(acc[1] / k);
            history.divergence_estimate.push(acc[2] / k);
            if cfg.divergence == Divergence::W1 {
                history.grad_norm.push(acc[3] / k);
            }
            acc = [0.0; 4];
            in_epoch = 0;
        }
    }

    h.net.set_params(ema.shadow())?;
    Ok(GeneratorBundle {
        ae: ae.clone(),
        generator: h,
        meta: BundleMeta {
            seed: rng.seed(),
            step_one: None,
            step_one_history: None,
            step_two: cfg.clone(),
            step_two_history: history,
        },
    })
}
