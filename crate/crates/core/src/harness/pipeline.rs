use std::path::{Path, PathBuf};
use std::time::Instant;

use super::artifacts::{save_checkpoint, Checkpoint};
use super::{ExperimentConfig, HarnessError, LatentModel, MetricsRecord, RunStatus};
use crate::data::{dist_to_circle_support, sample_circle_model, CircleData};
use crate::diffusion::{em_sample, train_score_net, DiffusionError, TrainedScore};
use crate::engine::Tensor;
use crate::lsdm::{
    generate_latent, latent_probes, lipschitz_transfer_check, range_proximity, risk_decomposition, train_autoencoder,
    train_latent_generator, AutoencoderPair, GeneratorBundle, LsdmError,
};
use crate::ot::{w1_exact_equal, EmpiricalSample, OtError};
use crate::rng::Rng;

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub record: MetricsRecord,
    pub checkpoints: Vec<PathBuf>,
}

enum LatentSampler {
    Adversarial(GeneratorBundle),
    Diffusion(TrainedScore),
}

impl LatentSampler {
    fn sample(&self, x: &Tensor, rng: &mut Rng) -> Result<Tensor, HarnessError> {
        Ok(match self {
            LatentSampler::Adversarial(b) => generate_latent(b, x, 1, rng)?,
            LatentSampler::Diffusion(s) => em_sample(&s.score, x, 1, &s.config, rng)?,
        })
    }
}

/// Outcome of a stage: `Ok(None)` means training diverged.
fn diverged<T>(r: Result<T, HarnessError>) -> Result<Option<T>, HarnessError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(HarnessError::Lsdm(e)) if e.is_divergence() => Ok(None),
        Err(HarnessError::Lsdm(LsdmError::Ot(OtError::NonFinite))) => Ok(None),
        Err(HarnessError::Diffusion(DiffusionError::NonFinite { .. })) => Ok(None),
        Err(HarnessError::Diffusion(DiffusionError::Ot(OtError::NonFinite))) => Ok(None),
        Err(e) => Err(e),
    }
}

fn blank_record(cfg: &ExperimentConfig, seed: u64) -> MetricsRecord {
    let (variant, divergence) = match cfg.latent_model {
        LatentModel::Adversarial => (cfg.step_two.variant.to_string(), cfg.step_two.divergence.to_string()),
        LatentModel::Diffusion => ("dlsdm".to_string(), "score".to_string()),
    };
    MetricsRecord {
        run_id: format!("{}-{seed}", cfg.hash()),
        seed,
        variant,
        divergence,
        n: cfg.data.n,
        unpaired: cfg.data.unpaired,
        m: cfg.step_one.latent_dim,
        d: cfg.noise_dim(),
        c1: cfg.data.c1,
        c2: cfg.data.c2,
        recon_train: None,
        recon_test: None,
        w1_joint_test: None,
        w1_latent_test: None,
        thm1_lhs: None,
        thm1_recon: None,
        thm1_matched: None,
        thm1_holds: None,
        thm2_holds: None,
        range_sup_dist: None,
        critic_grad_norm_mean: None,
        wallclock_s: 0.0,
        status: RunStatus::Ok,
    }
}

fn joint(x: &Tensor, z: &Tensor) -> Result<EmpiricalSample, HarnessError> {
    Ok(EmpiricalSample::new(x.hcat(z).map_err(LsdmError::from)?).map_err(LsdmError::from)?)
}

fn evaluate(
    rec: &mut MetricsRecord,
    cfg: &ExperimentConfig,
    data: &CircleData,
    ae: &AutoencoderPair,
    sampler: &LatentSampler,
    rng: &mut Rng,
) -> Result<(), HarnessError> {
    let test = &data.test;
    let z_gen = sampler.sample(&test.x, rng)?;
    let y_gen = ae.decode(&z_gen)?;
    let risk = risk_decomposition(ae, test, &y_gen)?;
    rec.w1_joint_test = Some(risk.joint_w1);
    rec.thm1_lhs = Some(risk.joint_w1);
    rec.thm1_recon = Some(risk.recon_term);
    rec.thm1_matched = Some(risk.matched_w1);
    rec.thm1_holds = Some(risk.holds);

    let z_enc = ae.encode(&test.y)?;
    let latent = w1_exact_equal(&joint(&test.x, &z_gen)?, &joint(&test.x, &z_enc)?).map_err(LsdmError::from)?;
    rec.w1_latent_test = Some(latent.0);

    let a = EmpiricalSample::new(z_gen).map_err(LsdmError::from)?;
    let b = EmpiricalSample::new(z_enc.clone()).map_err(LsdmError::from)?;
    rec.thm2_holds = Some(lipschitz_transfer_check(&ae.decoder, &a, &b)?.holds);

    // Paired responses live on the unit circle, unpaired ones on its c1-shift.
    let c1 = cfg.data.c1;
    let probes = latent_probes(&z_enc, cfg.range_grid)?;
    rec.range_sup_dist = Some(range_proximity(&ae.decoder, &probes, |y| {
        dist_to_circle_support(y, 0.0).min(dist_to_circle_support(y, c1))
    })?);
    Ok(())
}

/// Mean of the last tenth (at least one entry) of a per-epoch series.
fn tail_mean(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let k = (v.len() / 10).max(1);
    Some(v[v.len() - k..].iter().sum::<f64>() / k as f64)
}

/// Samples data, runs Step 1 and the configured latent model, evaluates on the
/// test split and optionally writes checkpoints under `out/checkpoints`.
pub fn run_pipeline(cfg: &ExperimentConfig, seed: u64, out: Option<&Path>) -> Result<PipelineOutput, HarnessError> {
    cfg.validate()?;
    let start = Instant::now();
    let mut rec = blank_record(cfg, seed);
    let mut checkpoints = Vec::new();
    let rng = Rng::new(seed);
    let data = sample_circle_model(&cfg.data, &rng.child("data"))?;
    let all = data.all_responses();

    let result = (|| -> Result<bool, HarnessError> {
        let step_one = diverged(train_autoencoder(&all, &cfg.step_one, &rng.child("step_one")).map_err(HarnessError::from))?;
        let Some((ae, history_one)) = step_one else {
            return Ok(false);
        };
        rec.recon_train = Some(ae.recon_error(&all)?);
        rec.recon_test = Some(ae.recon_error(&data.test.y)?);

        let sampler = match cfg.latent_model {
            LatentModel::Adversarial => {
                let trained = train_latent_generator(&data.paired, &ae, &cfg.step_two, &rng.child("step_two"));
                let Some(mut bundle) = diverged(trained.map_err(HarnessError::from))? else {
                    return Ok(false);
                };
                bundle.meta.seed = seed;
                bundle.meta.step_one = Some(cfg.step_one.clone());
                bundle.meta.step_one_history = Some(history_one);
                rec.critic_grad_norm_mean = tail_mean(&bundle.meta.step_two_history.grad_norm);
                LatentSampler::Adversarial(bundle)
            }
            LatentModel::Diffusion => {
                let z = ae.encode(&data.paired.y)?;
                let trained = train_score_net(&data.paired.x, &z, &cfg.diffusion, &rng.child("diffusion"));
                let Some(score) = diverged(trained.map_err(HarnessError::from))? else {
                    return Ok(false);
                };
                LatentSampler::Diffusion(score)
            }
        };

        if let (Some(dir), true) = (out, cfg.save_checkpoints) {
            let dir = dir.join("checkpoints");
            let id = &rec.run_id;
            let mut save = |name: String, object: Checkpoint| -> Result<(), HarnessError> {
                let path = dir.join(name);
                save_checkpoint(&object, &path)?;
                checkpoints.push(path);
                Ok(())
            };
            match &sampler {
                LatentSampler::Adversarial(b) => save(format!("{id}.bundle.json"), Checkpoint::Bundle(b.clone()))?,
                LatentSampler::Diffusion(s) => {
                    save(format!("{id}.encoder.json"), Checkpoint::Mlp(ae.encoder.clone(), None))?;
                    save(format!("{id}.decoder.json"), Checkpoint::Mlp(ae.decoder.clone(), None))?;
                    save(format!("{id}.score.json"), Checkpoint::Score(s.clone()))?;
                }
            }
        }

        let evaluated = evaluate(&mut rec, cfg, &data, &ae, &sampler, &mut rng.child("eval"));
        Ok(diverged(evaluated)?.is_some())
    })();

    rec.status = match result {
        Ok(true) => RunStatus::Ok,
        Ok(false) => RunStatus::Diverged,
        Err(e @ HarnessError::Io { .. }) | Err(e @ HarnessError::Checkpoint(_)) => return Err(e),
        Err(e) => {
            log::warn!("run {} failed: {e}", rec.run_id);
            RunStatus::Failed
        }
    };
    rec.wallclock_s = start.elapsed().as_secs_f64();
    Ok(PipelineOutput { record: rec, checkpoints })
}
