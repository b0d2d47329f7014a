//! Dense reverse-mode differentiation, MLPs and optimizers.

pub mod checkpoint;
pub mod graph;
pub mod lipschitz;
pub mod mlp;
pub mod optim;
pub mod tensor;

pub use graph::{Graph, NodeId};
pub use lipschitz::{lipschitz_upper_bound, spectral_norm};
pub use mlp::{parameter_count, Activation, BoundMlp, Init, MlpSpec, Network};
pub use optim::{lr_schedule_value, Adam, AdamConfig, Ema};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("gradient requested of a non-scalar node with shape {0:?}")]
    NotScalar([usize; 2]),
    #[error("output does not depend on any requested node")]
    Disconnected,
    #[error("input is not an ancestor of the output")]
    NotAncestor,
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("activation not 1-Lipschitz: {0}")]
    Activation(String),
}
