//! Experiment orchestration: end-to-end runs on the circle model, ablation
//! grids, the property-check suite and checkpoint I/O.

mod ablation;
mod artifacts;
mod pipeline;
mod plot;
mod verify;

pub use ablation::{merge_json, run_ablation, AblationGrid, AblationOutcome, GridCell, SummaryRow};
pub use artifacts::{load_checkpoint, save_checkpoint, write_metrics_csv, Checkpoint};
pub use pipeline::{run_pipeline, PipelineOutput};
pub use plot::line_chart_svg;
pub use verify::{run_verification_suite, CheckResult, Scope, VerifyOptions, VerifyReport};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{CircleModelConfig, DataError};
use crate::diffusion::{DiffusionConfig, DiffusionError};
use crate::engine::checkpoint::CheckpointError;
use crate::lsdm::{LsdmError, StepOneConfig, StepTwoConfig};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Lsdm(#[from] LsdmError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("config: {0}")]
    Config(String),
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }
}

/// How latent codes are generated from `(x, η)` after Step 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentModel {
    /// Adversarial Step 2 (`step_two` settings).
    Adversarial,
    /// Conditional score model sampled by Euler–Maruyama (`diffusion` settings).
    Diffusion,
}

/// Everything one run needs. Missing JSON fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: CircleModelConfig,
    pub step_one: StepOneConfig,
    pub latent_model: LatentModel,
    pub step_two: StepTwoConfig,
    pub diffusion: DiffusionConfig,
    /// One run per seed.
    pub seeds: Vec<u64>,
    /// Grid points added to the encoded test responses when probing the decoder's range.
    pub range_grid: usize,
    /// Write model checkpoints next to the metrics.
    pub save_checkpoints: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: CircleModelConfig::default(),
            step_one: StepOneConfig::default(),
            latent_model: LatentModel::Adversarial,
            step_two: StepTwoConfig::default(),
            diffusion: DiffusionConfig::default(),
            seeds: vec![0, 1, 2, 3, 4],
            range_grid: 200,
            save_checkpoints: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the fully resolved config.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(serde_json::to_string(self).expect("config serializes").as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.data.validate()?;
        self.step_one.validate()?;
        match self.latent_model {
            LatentModel::Adversarial => self.step_two.validate()?,
            LatentModel::Diffusion => self.diffusion.validate()?,
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("at least one seed is required".into()));
        }
        Ok(())
    }

    pub fn noise_dim(&self) -> usize {
        match self.latent_model {
            LatentModel::Adversarial => self.step_two.noise_dim,
            // One standard normal per coordinate and Euler step, reported as the latent width.
            LatentModel::Diffusion => self.step_one.latent_dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    /// Training produced non-finite values; metrics past that point are empty.
    Diverged,
    /// Any other error.
    Failed,
}

/// One row of `metrics.csv`. Column order is part of the output format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub seed: u64,
    pub variant: String,
    pub divergence: String,
    pub n: usize,
    #[serde(rename = "N")]
    pub unpaired: usize,
    pub m: usize,
    pub d: usize,
    pub c1: f64,
    pub c2: f64,
    pub recon_train: Option<f64>,
    pub recon_test: Option<f64>,
    pub w1_joint_test: Option<f64>,
    pub w1_latent_test: Option<f64>,
    pub thm1_lhs: Option<f64>,
    pub thm1_recon: Option<f64>,
    pub thm1_matched: Option<f64>,
    pub thm1_holds: Option<bool>,
    pub thm2_holds: Option<bool>,
    pub range_sup_dist: Option<f64>,
    pub critic_grad_norm_mean: Option<f64>,
    pub wallclock_s: f64,
    pub status: RunStatus,
}

pub const METRICS_COLUMNS: [&str; 23] = [
    "run_id",
    "seed",
    "variant",
    "divergence",
    "n",
    "N",
    "m",
    "d",
    "c1",
    "c2",
    "recon_train",
    "recon_test",
    "w1_joint_test",
    "w1_latent_test",
    "thm1_lhs",
    "thm1_recon",
    "thm1_matched",
    "thm1_holds",
    "thm2_holds",
    "range_sup_dist",
    "critic_grad_norm_mean",
    "wallclock_s",
    "status",
];

impl MetricsRecord {
    /// Equality ignoring `wallclock_s`.
    pub fn same_metrics(&self, other: &Self) -> bool {
        let mut a = self.clone();
        a.wallclock_s = other.wallclock_s;
        &a == other
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_materialize() {
        let cfg = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        let partial = ExperimentConfig::from_json(r#"{"data": {"n": 25, "N": 975}, "seeds": [3]}"#).unwrap();
        assert_eq!((partial.data.n, partial.data.unpaired, partial.seeds.clone()), (25, 975, vec![3]));
        assert_eq!(partial.step_two, StepTwoConfig::default());
        assert_ne!(partial.hash(), cfg.hash());
        assert!(ExperimentConfig::from_json(r#"{"dta": {}}"#).is_err());
    }

    #[test]
    fn csv_header_order() {
        let rec = MetricsRecord {
            run_id: "r".into(),
            seed: 1,
            variant: "clsdm".into(),
            divergence: "w1".into(),
            n: 2,
            unpaired: 3,
            m: 1,
            d: 2,
            c1: 0.0,
            c2: 0.0,
            recon_train: Some(0.5),
            recon_test: None,
            w1_joint_test: None,
            w1_latent_test: None,
            thm1_lhs: None,
            thm1_recon: None,
            thm1_matched: None,
            thm1_holds: Some(true),
            thm2_holds: None,
            range_sup_dist: None,
            critic_grad_norm_mean: None,
            wallclock_s: 1.0,
            status: RunStatus::Diverged,
        };
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(&rec).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), METRICS_COLUMNS.join(","));
        assert_eq!(lines.next().unwrap(), "r,1,clsdm,w1,2,3,1,2,0.0,0.0,0.5,,,,,,,true,,,,1.0,diverged");
    }
}
