//! Two-step latent space distribution matching.
//!
//! Step 1 fits an autoencoder `(E, D)` on every available response, paired or
//! not. Step 2 freezes it and trains a latent generator `H(x, η)` on the
//! paired data only, adversarially against a critic on `(x, z)`. The final
//! conditional generator is `G = D ∘ H`.

mod autoencoder;
mod bundle;
mod diagnostics;
mod step_two;

pub use autoencoder::{train_autoencoder, wae_penalty, AutoencoderPair, StepOneConfig, StepOneHistory};
pub(crate) use bundle::bundle_from_document;
pub use bundle::{generate_conditional, generate_latent, load_bundle, save_bundle, BundleMeta, GeneratorBundle, BUNDLE_KIND};
pub use diagnostics::{
    latent_probes, lipschitz_transfer_check, quantile_oracle_generator, range_proximity, risk_decomposition,
    LipschitzTransfer, QuantileOracle, RiskDecomposition,
};
pub use step_two::{
    critic_grad_norm, gradient_penalty_term, step_two_losses, train_latent_generator, Divergence, GpMode,
    LatentGenerator, StepTwoConfig, StepTwoHistory, StepTwoLosses, Variant,
};

use crate::engine::checkpoint::CheckpointError;
use crate::engine::EngineError;
use crate::ot::OtError;

#[derive(Debug, thiserror::Error)]
pub enum LsdmError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Ot(#[from] OtError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("no data")]
    EmptyData,
    #[error("non-finite {what} at {stage} step {step}")]
    NonFinite {
        stage: &'static str,
        what: &'static str,
        step: usize,
    },
    #[error("quantile cell {0} has no observations")]
    EmptyCell(usize),
}

impl LsdmError {
    /// Training blew up (as opposed to a usage error).
    pub fn is_divergence(&self) -> bool {
        matches!(self, LsdmError::NonFinite { .. })
    }
}
