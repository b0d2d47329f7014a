//! Randomized property checks over the OT, divergence, autodiff, theorem-check
//! and diffusion building blocks. Failures are report content, never errors.

use std::f64::consts::{LN_2, PI};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::data::{sample_circle_model, CircleModelConfig};
use crate::diffusion::{em_sample, ou_marginal, AnalyticScore, DiffusionConfig};
use crate::engine::{Activation, Graph, MlpSpec, Network, Tensor};
use crate::lsdm::{
    gradient_penalty_term, lipschitz_transfer_check, quantile_oracle_generator, risk_decomposition, train_autoencoder,
    AutoencoderPair, GpMode, StepOneConfig,
};
use crate::ot::{
    brute_force, divergence_bound_check, f_divergence, hungarian, w1_1d_weighted, w1_exact_equal, w1_exact_equal_with,
    AssignmentSolver, CostMatrix, DiscreteDist1D, DivergenceKind, EmpiricalSample, Histogram,
};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    /// Assignment solver against brute force; 1-D W1 against sorted matching.
    Ot,
    /// Pinsker, KL ≤ χ², JS ≤ ln 2 and the W1 ≤ f-divergence bound.
    Divergence,
    /// Autodiff against central finite differences, including the penalty path.
    Gradients,
    /// Joint-risk split on random untrained autoencoders.
    Risk,
    /// Decoded W1 against the certified Lipschitz bound.
    Lipschitz,
    /// OU marginal conservation and Euler–Maruyama with an exact score.
    Diffusion,
    /// Quantile generator on encoded circle data.
    Quantile,
}

impl Scope {
    pub const ALL: [Scope; 7] = [
        Scope::Ot,
        Scope::Divergence,
        Scope::Gradients,
        Scope::Risk,
        Scope::Lipschitz,
        Scope::Diffusion,
        Scope::Quantile,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scope::Ot => "ot",
            Scope::Divergence => "divergence",
            Scope::Gradients => "gradients",
            Scope::Risk => "risk",
            Scope::Lipschitz => "lipschitz",
            Scope::Diffusion => "diffusion",
            Scope::Quantile => "quantile",
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scope {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Scope::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown scope {s:?} (expected one of ot, divergence, gradients, risk, lipschitz, diffusion, quantile)"))
    }
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub scopes: Vec<Scope>,
    /// Solver under test in the assignment check; swap in a broken one to see the check fail.
    pub solver: AssignmentSolver,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            scopes: Scope::ALL.to_vec(),
            solver: hungarian,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub scope: Scope,
    pub trials: usize,
    pub passed: usize,
    /// Smallest `tolerance − violation` over all trials; negative means a failure.
    pub worst_slack: f64,
    pub seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl CheckResult {
    pub fn ok(&self) -> bool {
        self.error.is_none() && self.trials > 0 && self.passed == self.trials
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(CheckResult::ok)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn write(&self, path: &Path) -> Result<(), HarnessError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        }
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, text + "\n").map_err(|e| HarnessError::io(path, e))
    }
}

#[derive(Default)]
struct Tally {
    trials: usize,
    passed: usize,
    worst: Option<f64>,
}

impl Tally {
    /// `slack ≥ 0` passes.
    fn add(&mut self, slack: f64) {
        self.trials += 1;
        if slack >= 0.0 {
            self.passed += 1;
        }
        self.worst = Some(self.worst.map_or(slack, |w: f64| w.min(slack)));
    }
}

type CheckFn = fn(&VerifyOptions, &mut Rng) -> Result<Tally, String>;

const CHECKS: [(&str, Scope, CheckFn); 13] = [
    ("assignment_vs_brute_force", Scope::Ot, assignment_vs_brute_force),
    ("w1_1d_vs_sorted", Scope::Ot, w1_1d_vs_sorted),
    ("pinsker", Scope::Divergence, pinsker),
    ("kl_below_chi2", Scope::Divergence, kl_below_chi2),
    ("js_below_ln2", Scope::Divergence, js_below_ln2),
    ("w1_divergence_bound", Scope::Divergence, w1_divergence_bound),
    ("mlp_gradients", Scope::Gradients, mlp_gradients),
    ("penalty_gradients", Scope::Gradients, penalty_gradients),
    ("risk_split", Scope::Risk, risk_split),
    ("lipschitz_transfer", Scope::Lipschitz, lipschitz_transfer),
    ("ou_conservation", Scope::Diffusion, ou_conservation),
    ("gaussian_em_w1", Scope::Diffusion, gaussian_em_w1),
    ("quantile_oracle", Scope::Quantile, quantile_oracle),
];

/// Runs every check in the selected scopes. Each check draws from its own
/// stream, so selecting fewer scopes does not change the others' results.
pub fn run_verification_suite(opts: &VerifyOptions) -> VerifyReport {
    let root = Rng::new(opts.seed);
    let checks = CHECKS
        .iter()
        .filter(|(_, scope, _)| opts.scopes.contains(scope))
        .map(|&(name, scope, run)| {
            let start = Instant::now();
            let outcome = run(opts, &mut root.child(name));
            let seconds = start.elapsed().as_secs_f64();
            let result = match outcome {
                Ok(t) => CheckResult {
                    name: name.into(),
                    scope,
                    trials: t.trials,
                    passed: t.passed,
                    worst_slack: t.worst.unwrap_or(0.0),
                    seconds,
                    error: None,
                },
                Err(e) => CheckResult {
                    name: name.into(),
                    scope,
                    trials: 0,
                    passed: 0,
                    worst_slack: f64::NEG_INFINITY,
                    seconds,
                    error: Some(e),
                },
            };
            log::info!("{name}: {}/{} (worst slack {:.3e})", result.passed, result.trials, result.worst_slack);
            result
        })
        .collect();
    VerifyReport { seed: opts.seed, checks }
}

fn err(e: impl fmt::Display) -> String {
    e.to_string()
}

fn random_points(n: usize, dim: usize, rng: &mut Rng) -> Result<EmpiricalSample, String> {
    let t = Tensor::new(n, dim, (0..n * dim).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).map_err(err)?;
    EmpiricalSample::new(t).map_err(err)
}

fn assignment_vs_brute_force(opts: &VerifyOptions, rng: &mut Rng) -> Result<Tally, String> {
    let mut t = Tally::default();
    for n in 2..=7 {
        for _ in 0..200 {
            let dim = 1 + rng.index(3);
            let a = random_points(n, dim, rng)?;
            let b = random_points(n, dim, rng)?;
            let fast = w1_exact_equal_with(opts.solver, &a, &b).map_err(err)?.0;
            let cost = CostMatrix::from_fn(n, |i, j| crate::ot::w1::euclidean(a.point(i), b.point(j)));
            let best = brute_force(&cost).0 / n as f64;
            t.add(1e-9 - (fast - best).abs());
        }
    }
    Ok(t)
}

fn w1_1d_vs_sorted(_: &VerifyOptions, rng: &mut Rng) -> Result<Tally, String> {
    let mut t = Tally::default();
    for _ in 0..200 {
        let n = 1 + rng.index(40);
        let mut a: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let mut b: Vec<f64> = (0..n).map(|_| 2.0 * rng.normal() + 0.5).collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let w = vec![1.0; n];
        let p = DiscreteDist1D::from_weights(a.clone(), &w).map_err(err)?;
        let q = DiscreteDist1D::from_weights(b.clone(), &w).map_err(err)?;
        let sorted = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / n as f64;
        t.add(1e-9 - (w1_1d_weighted(&p, &q) - sorted).abs());
    }
    Ok(t)
}

/// Random pair of distributions on a shared random support; `p` may have
/// zero cells, `q` is strictly positive.
fn random_pair(rng: &mut Rng) -> Result<(DiscreteDist1D, DiscreteDist1D), String> {
    let k = 2 + rng.index(9);
    let mut support: Vec<f64> = (0..k).map(|_| rng.uniform_range(-3.0, 3.0)).collect();
    support.sort_by(f64::total_cmp);
    let mut wp: Vec<f64> = (0..k).map(|_| if rng.uniform() < 0.2 { 0.0 } else { rng.uniform() }).collect();
    if wp.iter().all(|&w| w == 0.0) {
        wp[0] = 1.0;
    }
    let wq: Vec<f64> = (0..k).map(|_| 0.01 + rng.uniform()).collect();
    Ok((
        DiscreteDist1D::from_weights(support.clone(), &wp).map_err(err)?,
        DiscreteDist1D::from_weights(support, &wq).map_err(err)?,
    ))
}

fn divergences(p: &DiscreteDist1D, q: &DiscreteDist1D, kind: DivergenceKind) -> Result<f64, String> {
    let grid = crate::ot::w1::union_support(p, q);
    let ph = Histogram::new(p.on_grid(&grid)).map_err(err)?;
    let qh = Histogram::new(q.on_grid(&grid)).map_err(err)?;
    f_divergence(&ph, &qh, kind).map_err(err)
}

const PAIRS: usize = 1000;
const INEQ_TOL: f64 = 1e-12;

fn pinsker(_: &VerifyOptions, rng: &mut Rng) -> Result<Tally, String> {
    let mut t = Tally::default();
    for _ in 0..PAIRS {
        let (p, q) = random_pair(rng)?;
        let tv = divergences(&p, &q, DivergenceKind::Tv)?;
        let kl = divergences(&p, &q, DivergenceKind::Kl)?;
        t.add((kl / 2.0).sqrt() - tv + INEQ_TOL);
    }
    Ok(t)
}

fn kl_below_chi2(_: &VerifyOptions, rng: &mut Rng) -> Result<Tally, String> {
    let mut t = Tally::default();
    for _ in 0..PAIRS {
        let (p, q) = random_pair(rng)?;
        let kl = divergences(&p, &q, DivergenceKind::Kl)?;
        let chi2 = divergences(&p, &q, DivergenceKind::Chi2)?;
        t.add(chi2 - kl + INEQ_TOL);
    }
    Ok(t)
}

fn js_below_ln2(_: &VerifyOptions, rng: &mut Rng) -> Result<Tally, String> {
    let mut t = Tally::default();
    for _ in 0..PAIRS {
        let (p, q) = random_pair(rng)?;
        t.add(LN_2 - divergences(&p, &q, DivergenceKind::Js)? + INEQ_TOL);
    }
    Ok(t)
}

fn w1_divergence_bound(_: &VerifyOptions, rng: &mut Rng) -> Result<Tally, String> {
    let mut t = Tally::default();
    for _ in 0..PAIRS {
        let (p, q) = random_pair(rng)?;
        for kind in DivergenceKind::ALL {
            let check = divergence_bound_check(&p, &q, kind).map_err(err)?;
            t.add(if check.holds { check.slack().max(0.0) } else { check.slack() });
        }
    }
    Ok(t)
}

fn random_mlp(rng: &mut Rng) -> Result<Network, String> {
    let depth = 1 + rng.index(3);
    let mut dims = vec![1 + rng.index(4)];
    for _ in 0..depth {
        dims.push(1 + rng.index(6));
    }
    let hidden = match rng.index(4) {
        0 => Activation::Tanh,
        1 => Activation::Sigmoid,
        2 => Activation::LeakyRelu(0.2),
        _ => Activation::Relu,
    };
    let output = if rng.uniform() < 0.5 { Activation::Linear } else { Activation::Tanh };
    let mut net = Network::build(&MlpSpec::new(&dims, hidden, output), rng).map_err(err)?;
    // Zero biases put pre-activations exactly on a ReLU kink when a layer is dead.
    for b in net.params_mut().into_iter().skip(1).step_by(2) {
        for v in b.data_mut() {
            *v = 0.1 * rng.normal();
        }
    }
    Ok(net)
}

/// Largest `|fd − ad| / max(|ad|, floor)` over every parameter entry.
fn max_rel_error(net: &Network, grads: &[Tensor], floor: f64, value: impl Fn(&Network) -> Result<f64, String>) -> Result<f64, String> {
    let h = 1e-6;
    let mut worst = 0.0f64;
    for (k, grad) in grads.iter().enumerate() {
        for i in 0..grad.len() {
            let mut up = net.clone();
            let mut down = net.clone();
            up.params_mut()[k].data_mut()[i] += h;
            down.params_mut()[k].data_mut()[i] -= h;
            let fd = (value(&up)? - value(&down)?) / (2.0 * h);
            let ad = grad.data()[i];
            worst = worst.max((fd - ad).abs() / ad.abs().max(floor));
        }
    }
    Ok(worst)
}

fn mlp_gradients(_: &VerifyOptions, rng: &mut Rng) -> Result<Tally, String> {
    let mut t = Tally::default();
    for _ in 0..100 {
        let net = random_mlp(rng)?;
        let batch = 1 + rng.index(8);
        let x = Tensor::new(batch, net.input_dim(), rng.normal_vec(batch * net.input_dim())).map_err(err)?;
        let y = Tensor::new(batch, net.output_dim(), rng.normal_vec(batch * net.output_dim())).map_err(err)?;
        let build = |n: &Network| -> Result<(Graph, crate::engine::NodeId, Vec<crate::engine::NodeId>), String> {
            let mut g = Graph::new();
            let b = n.bind(&mut g);
            let xi = g.constant(x.clone());
            let yi = g.constant(y.clone());
            let out = b.forward(&mut g, xi).map_err(err)?;
            let d = g.sub(out, yi);
            let sq = g.square(d);
            let loss = g.mean(sq);
            Ok((g, loss, b.params()))
        };
        let value = |n: &Network| build(n).map(|(g, loss, _)| g.value(loss).item());
        let (mut g, loss, params) = build(&net)?;
        let grads = g.grad_values(loss, &params).map_err(err)?;
        t.add(1e-5 - max_rel_error(&net, &grads, 1e-3, value)?);
    }
    Ok(t)
}

fn penalty_gradients(_: &VerifyOptions, rng: &mut Rng) -> Result<Tally, String> {
    let mut t = Tally::default();
    for trial in 0..10 {
        let (p, m, b) = (1 + rng.index(2), 1 + rng.index(2), 2 + rng.index(5));
        let spec = MlpSpec::new(&[p + m, 4 + rng.index(4), 4, 1], Activation::LeakyRelu(0.2), Activation::Linear);
        let critic = Network::build(&spec, rng).map_err(err)?;
        let x = Tensor::new(b, p, rng.normal_vec(b * p)).map_err(err)?;
        let zr = Tensor::new(b, m, rng.normal_vec(b * m)).map_err(err)?;
        let zf = Tensor::new(b, m, rng.normal_vec(b * m)).map_err(err)?;
        let mode = if trial % 2 == 0 { GpMode::Interpolate } else { GpMode::RealPoint };
        let noise_seed = rng.next_u64();
        let build = |n: &Network| -> Result<(Graph, crate::engine::NodeId, Vec<crate::engine::NodeId>), String> {
            let mut g = Graph::new();
            let cb = n.bind(&mut g);
            let (pen, _) = gradient_penalty_term(&mut g, &cb, &x, &zr, &zf, 10.0, mode, &mut Rng::new(noise_seed)).map_err(err)?;
            Ok((g, pen, cb.params()))
        };
        let value = |n: &Network| build(n).map(|(g, pen, _)| g.value(pen).item());
        let (mut g, pen, params) = build(&critic)?;
        let grads = g.grad_values(pen, &params).map_err(err)?;
        t.add(1e-4 - max_rel_error(&critic, &grads, 1e-2, value)?);
    }
    Ok(t)
}

fn small_autoencoder(rng: &mut Rng) -> Result<AutoencoderPair, String> {
    let cfg = StepOneConfig {
        latent_dim: 1 + rng.index(2),
        hidden: vec![4 + rng.index(12)],
        ..Default::default()
    };
    AutoencoderPair::build(2, &cfg, &rng.child("ae")).map_err(err)
}

fn risk_split(_: &VerifyOptions, rng: &mut Rng) -> Result<Tally, String> {
    let mut t = Tally::default();
    for i in 0..50 {
        let ae = small_autoencoder(&mut rng.child_indexed("model", i))?;
        let data_cfg = CircleModelConfig {
            n: 1,
            unpaired: 0,
            test_size: 20 + rng.index(60),
            ..Default::default()
        };
        let data = sample_circle_model(&data_cfg, &rng.child_indexed("data", i)).map_err(err)?;
        let k = data.test.len();
        let z = Tensor::new(k, ae.latent_dim(), rng.normal_vec(k * ae.latent_dim())).map_err(err)?;
        let generated = ae.decode(&z).map_err(err)?;
        let r = risk_decomposition(&ae, &data.test, &generated).map_err(err)?;
        t.add(r.slack() + 1e-9);
    }
    Ok(t)
}

fn lipschitz_transfer(_: &VerifyOptions, rng: &mut Rng) -> Result<Tally, String> {
    let mut t = Tally::default();
    for _ in 0..100 {
        let m = 1 + rng.index(3);
        let width = 2 + rng.index(10);
        let hidden = if rng.uniform() < 0.5 { Activation::LeakyRelu(0.2) } else { Activation::Tanh };
        let decoder = Network::build(&MlpSpec::new(&[m, width, width, 2], hidden, Activation::Linear), rng).map_err(err)?;
        let n = 5 + rng.index(30);
        let a = random_points(n, m, rng)?;
        let b = random_points(n, m, rng)?;
        let r = lipschitz_transfer_check(&decoder, &a, &b).map_err(err)?;
        t.add(r.k_hat.max(1.0) * r.w1_latent - r.w1_decoded + 1e-9);
    }
    Ok(t)
}

fn ou_conservation(_: &VerifyOptions, _: &mut Rng) -> Result<Tally, String> {
    let mut t = Tally::default();
    for i in 0..1000 {
        let s = 10.0 * i as f64 / 999.0;
        let (a, v) = ou_marginal(s).map_err(err)?;
        t.add(1e-12 - (a * a + v - 1.0).abs());
    }
    Ok(t)
}

fn gaussian_em_w1(_: &VerifyOptions, rng: &mut Rng) -> Result<Tally, String> {
    let cfg = DiffusionConfig::default();
    let score = AnalyticScore::gaussian(1, 0.25, |x| vec![x[0] - 1.0]);
    let n = 1000;
    let x = Tensor::new(n, 1, (0..n).map(|_| rng.uniform_range(0.0, 3.0)).collect()).map_err(err)?;
    let target: Vec<f64> = x.data().iter().map(|xi| xi - 1.0 + 0.5 * rng.normal()).collect();
    let generated = em_sample(&score, &x, 1, &cfg, rng).map_err(err)?;
    let a = EmpiricalSample::new(x.hcat(&Tensor::column(&target)).map_err(err)?).map_err(err)?;
    let b = EmpiricalSample::new(x.hcat(&generated).map_err(err)?).map_err(err)?;
    let mut t = Tally::default();
    t.add(0.1 - w1_exact_equal(&a, &b).map_err(err)?.0);
    Ok(t)
}

/// Joint W1 between `(x_i, H*(x_i, η_i))` and `(x_i, E(y_i))` on the paired
/// sample the oracle was built from, for a briefly trained autoencoder.
fn quantile_oracle(_: &VerifyOptions, rng: &mut Rng) -> Result<Tally, String> {
    let n = 1000;
    let data_cfg = CircleModelConfig {
        n,
        unpaired: 0,
        test_size: 1,
        ..Default::default()
    };
    let data = sample_circle_model(&data_cfg, &rng.child("data")).map_err(err)?;
    let ae_cfg = StepOneConfig {
        epochs: 20,
        ..Default::default()
    };
    let (ae, _) = train_autoencoder(&data.paired.y, &ae_cfg, &rng.child("ae")).map_err(err)?;
    let z = ae.encode(&data.paired.y).map_err(err)?;
    let x = data.paired.x.data();
    let oracle = quantile_oracle_generator(x, z.data(), 20, (0.0, PI)).map_err(err)?;
    let eta = rng.normal_vec(n);
    let generated = oracle.generate(x, &eta);
    let a = EmpiricalSample::new(data.paired.x.hcat(&z).map_err(err)?).map_err(err)?;
    let b = EmpiricalSample::new(data.paired.x.hcat(&Tensor::column(&generated)).map_err(err)?).map_err(err)?;
    let w = w1_exact_equal(&a, &b).map_err(err)?.0;
    let mut t = Tally::default();
    t.add(4.0 / (n as f64).sqrt() - w);
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::assignment::identity_solver;

    fn only(scopes: &[Scope]) -> VerifyOptions {
        VerifyOptions {
            scopes: scopes.to_vec(),
            ..Default::default()
        }
    }

    #[test]
    fn scope_names_round_trip() {
        for s in Scope::ALL {
            assert_eq!(s.name().parse::<Scope>().unwrap(), s);
        }
        assert!("prop9".parse::<Scope>().is_err());
    }

    #[test]
    fn cheap_scopes_pass() {
        let report = run_verification_suite(&only(&[Scope::Ot, Scope::Divergence, Scope::Lipschitz]));
        assert!(report.all_passed(), "{report:#?}");
        assert_eq!(report.check("w1_divergence_bound").unwrap().trials, 5000);
    }

    #[test]
    fn broken_solver_is_caught_in_isolation() {
        let opts = VerifyOptions {
            solver: identity_solver,
            ..only(&[Scope::Ot, Scope::Divergence])
        };
        let report = run_verification_suite(&opts);
        assert!(!report.check("assignment_vs_brute_force").unwrap().ok());
        assert!(report.checks.iter().filter(|c| c.name != "assignment_vs_brute_force").all(CheckResult::ok));
    }
}
