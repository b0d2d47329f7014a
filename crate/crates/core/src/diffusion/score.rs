use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::DiffusionHistory;
use super::{ou_marginal, DiffusionConfig, DiffusionError};
use crate::engine::checkpoint::{decode_body, read_document, write_document, CheckpointError, MlpRecord};
use crate::engine::{Activation, BoundMlp, Graph, MlpSpec, Network, NodeId, Tensor};
use crate::rng::Rng;

pub const SCORE_KIND: &str = "score_mlp";

/// `(sin(α_k log σ), cos(α_k log σ))` with `α_k = 2^{k/2} / 4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeEmbedding {
    pub frequencies: usize,
}

impl TimeEmbedding {
    pub fn dim(&self) -> usize {
        2 * self.frequencies
    }

    pub fn alpha(k: usize) -> f64 {
        0.25 * 2f64.powf(k as f64 / 2.0)
    }

    pub fn embed(&self, sigma: f64, out: &mut Vec<f64>) {
        let ls = sigma.ln();
        out.extend((0..self.frequencies).map(|k| (Self::alpha(k) * ls).sin()));
        out.extend((0..self.frequencies).map(|k| (Self::alpha(k) * ls).cos()));
    }
}

/// Anything that evaluates `s(z, x, t) ≈ ∇ log p_t(z | x)` row by row.
pub trait Score {
    fn latent_dim(&self) -> usize;

    /// `t[i]` is the time for row `i`.
    fn score(&self, z: &Tensor, x: &Tensor, t: &[f64]) -> Result<Tensor, DiffusionError>;
}

/// MLP `D` on `[z_t, x / x_scale, embed(σ_t)]` read as a denoiser:
/// `s(z, x, t) = (e^{−t/2} D − z) / σ_t²`, which is exact when `D = E[Z_0 | z_t, x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreNet {
    pub net: Network,
    pub latent_dim: usize,
    pub predictor_dim: usize,
    pub embedding: TimeEmbedding,
    pub x_scale: f64,
}

impl ScoreNet {
    pub fn build(m: usize, p: usize, cfg: &DiffusionConfig, rng: &mut Rng) -> Result<Self, DiffusionError> {
        cfg.validate()?;
        let embedding = TimeEmbedding {
            frequencies: cfg.frequencies,
        };
        let mut dims = vec![m + p + embedding.dim()];
        dims.extend(&cfg.hidden);
        dims.push(m);
        let net = Network::build(&MlpSpec::new(&dims, Activation::Tanh, Activation::Linear), rng)?;
        Ok(Self {
            net,
            latent_dim: m,
            predictor_dim: p,
            embedding,
            x_scale: cfg.x_scale,
        })
    }

    fn check(&self, z: &Tensor, x: &Tensor, t: &[f64]) -> Result<(), DiffusionError> {
        let ok = z.cols() == self.latent_dim
            && x.cols() == self.predictor_dim
            && z.rows() == x.rows()
            && t.len() == z.rows();
        if !ok {
            return Err(DiffusionError::InvalidConfig(format!(
                "score inputs z {:?}, x {:?}, {} times for m = {}, p = {}",
                z.shape(),
                x.shape(),
                t.len(),
                self.latent_dim,
                self.predictor_dim
            )));
        }
        Ok(())
    }

    /// Network input, the per-row gain `e^{−t/2}/σ_t²` on `D`, and `z/σ_t²`.
    pub fn inputs(&self, z: &Tensor, x: &Tensor, t: &[f64]) -> Result<(Tensor, Tensor, Tensor), DiffusionError> {
        self.check(z, x, t)?;
        let width = self.net.input_dim();
        let mut data = Vec::with_capacity(z.rows() * width);
        let mut gain = Vec::with_capacity(z.rows());
        let mut shift = z.clone();
        for (i, &ti) in t.iter().enumerate() {
            let (a, var) = ou_marginal(ti)?;
            data.extend_from_slice(z.row(i));
            data.extend(x.row(i).iter().map(|v| v / self.x_scale));
            self.embedding.embed(var.sqrt(), &mut data);
            gain.push(a / var);
            for k in 0..self.latent_dim {
                shift.set(i, k, z.get(i, k) / var);
            }
        }
        Ok((Tensor::new(z.rows(), width, data)?, Tensor::column(&gain), shift))
    }

    /// Score as a graph node, for training.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        bound: &BoundMlp,
        z: &Tensor,
        x: &Tensor,
        t: &[f64],
    ) -> Result<NodeId, DiffusionError> {
        let (input, gain, shift) = self.inputs(z, x, t)?;
        let input = g.constant(input);
        let gain = g.constant(gain);
        let shift = g.constant(shift);
        let out = bound.forward(g, input)?;
        let scaled = g.mul_col(out, gain);
        Ok(g.sub(scaled, shift))
    }
}

impl Score for ScoreNet {
    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn score(&self, z: &Tensor, x: &Tensor, t: &[f64]) -> Result<Tensor, DiffusionError> {
        let (input, gain, shift) = self.inputs(z, x, t)?;
        let mut out = self.net.forward(&input)?;
        let m = self.latent_dim;
        for ((row, &c), sh) in out.data_mut().chunks_mut(m).zip(gain.data()).zip(shift.data().chunks(m)) {
            for (v, s) in row.iter_mut().zip(sh) {
                *v = *v * c - s;
            }
        }
        Ok(out)
    }
}

type ScoreFn = dyn Fn(&[f64], &[f64], f64) -> Vec<f64> + Send + Sync;

/// Closed-form score given as a function of `(z, x, t)` for one row.
pub struct AnalyticScore {
    latent_dim: usize,
    f: Box<ScoreFn>,
}

impl std::fmt::Debug for AnalyticScore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnalyticScore").field("latent_dim", &self.latent_dim).finish()
    }
}

impl AnalyticScore {
    pub fn new(latent_dim: usize, f: impl Fn(&[f64], &[f64], f64) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Self {
            latent_dim,
            f: Box::new(f),
        }
    }

    /// `s = −z`, the score of the stationary `N(0, I)` at every time.
    pub fn stationary(m: usize) -> Self {
        Self::new(m, |z, _, _| z.iter().map(|v| -v).collect())
    }

    /// Exact score when `Z | X = x ~ N(μ(x), v I)`:
    /// `−(z − μ e^{−t/2}) / (v e^{−t} + 1 − e^{−t})`.
    pub fn gaussian(m: usize, var: f64, mean: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Self::new(m, move |z, x, t| {
            let a = (-0.5 * t).exp();
            let s2 = var * a * a - (-t).exp_m1();
            z.iter().zip(mean(x)).map(|(zi, mi)| -(zi - mi * a) / s2).collect()
        })
    }
}

impl Score for AnalyticScore {
    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn score(&self, z: &Tensor, x: &Tensor, t: &[f64]) -> Result<Tensor, DiffusionError> {
        if z.cols() != self.latent_dim || z.rows() != x.rows() || t.len() != z.rows() {
            return Err(DiffusionError::InvalidConfig("analytic score input shapes".into()));
        }
        let mut data = Vec::with_capacity(z.rows() * self.latent_dim);
        for (i, &ti) in t.iter().enumerate() {
            let s = (self.f)(z.row(i), x.row(i), ti);
            if s.len() != self.latent_dim {
                return Err(DiffusionError::InvalidConfig("analytic score output width".into()));
            }
            data.extend(s);
        }
        Ok(Tensor::new(z.rows(), self.latent_dim, data)?)
    }
}

/// A fitted score network with the settings it was trained and should be sampled with.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedScore {
    pub score: ScoreNet,
    pub config: DiffusionConfig,
    pub history: DiffusionHistory,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct ScoreRecord {
    net: MlpRecord,
    latent_dim: usize,
    predictor_dim: usize,
    embedding: TimeEmbedding,
    x_scale: f64,
    config: DiffusionConfig,
    history: DiffusionHistory,
    seed: u64,
}

pub fn save_score_net(trained: &TrainedScore, path: &Path) -> Result<(), CheckpointError> {
    let s = &trained.score;
    let rec = ScoreRecord {
        net: MlpRecord::from_network(&s.net, None),
        latent_dim: s.latent_dim,
        predictor_dim: s.predictor_dim,
        embedding: s.embedding,
        x_scale: s.x_scale,
        config: trained.config.clone(),
        history: trained.history.clone(),
        seed: trained.seed,
    };
    write_document(path, SCORE_KIND, &rec)
}

pub fn load_score_net(path: &Path) -> Result<TrainedScore, CheckpointError> {
    let (kind, doc) = read_document(path)?;
    score_from_document(&kind, doc)
}

pub(crate) fn score_from_document(kind: &str, doc: serde_json::Value) -> Result<TrainedScore, CheckpointError> {
    let rec: ScoreRecord = decode_body(kind, doc, SCORE_KIND)?;
    let (net, _) = rec.net.to_network()?;
    if net.input_dim() != rec.latent_dim + rec.predictor_dim + rec.embedding.dim() || net.output_dim() != rec.latent_dim {
        return Err(CheckpointError::Shape("score network does not match its declared dimensions".into()));
    }
    Ok(TrainedScore {
        score: ScoreNet {
            net,
            latent_dim: rec.latent_dim,
            predictor_dim: rec.predictor_dim,
            embedding: rec.embedding,
            x_scale: rec.x_scale,
        },
        config: rec.config,
        history: rec.history,
        seed: rec.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_layout() {
        let e = TimeEmbedding { frequencies: 3 };
        let mut v = Vec::new();
        e.embed(1.0, &mut v);
        assert_eq!(v, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(TimeEmbedding::alpha(2), 0.5);
    }

    #[test]
    fn net_dims_and_graph_agree() {
        let cfg = DiffusionConfig {
            hidden: vec![7],
            ..Default::default()
        };
        let s = ScoreNet::build(2, 1, &cfg, &mut Rng::new(3)).unwrap();
        assert_eq!(s.net.input_dim(), 2 + 1 + 16);
        assert_eq!(s.net.output_dim(), 2);
        let mut rng = Rng::new(4);
        let z = Tensor::new(3, 2, rng.normal_vec(6)).unwrap();
        let x = Tensor::column(&[0.0, 1.0, 3.0]);
        let t = [0.01, 1.0, 4.0];
        let direct = s.score(&z, &x, &t).unwrap();
        let mut g = Graph::new();
        let b = s.net.bind(&mut g);
        let node = s.forward_graph(&mut g, &b, &z, &x, &t).unwrap();
        assert_eq!(g.value(node), &direct);
        assert!(s.score(&z, &x, &t[..2]).is_err());
    }

    #[test]
    fn gaussian_score_reduces_to_stationary() {
        // v = 1 and μ = 0 is the stationary law, whose score is −z at every t.
        let g = AnalyticScore::gaussian(2, 1.0, |_| vec![0.0, 0.0]);
        let st = AnalyticScore::stationary(2);
        let z = Tensor::new(2, 2, vec![0.3, -1.0, 2.0, 0.5]).unwrap();
        let x = Tensor::zeros(2, 1);
        let a = g.score(&z, &x, &[0.2, 3.0]).unwrap();
        let b = st.score(&z, &x, &[0.2, 3.0]).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("score.json");
        let cfg = DiffusionConfig {
            hidden: vec![5, 4],
            ..Default::default()
        };
        let trained = TrainedScore {
            score: ScoreNet::build(1, 1, &cfg, &mut Rng::new(1)).unwrap(),
            config: cfg,
            history: DiffusionHistory { loss: vec![1.5, 1.25] },
            seed: 9,
        };
        save_score_net(&trained, &path).unwrap();
        assert_eq!(load_score_net(&path).unwrap(), trained);
        assert!(matches!(
            crate::lsdm::load_bundle(&path),
            Err(CheckpointError::WrongKind { .. })
        ));
    }
}
