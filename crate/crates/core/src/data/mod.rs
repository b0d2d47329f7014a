//! Synthetic datasets: the noisy circle model with shifted unpaired
//! responses, and conditional Gaussian mixtures with closed-form scores.

mod circle;
mod mixture;

pub use circle::{
    conditional_mean, dist_to_circle_support, oracle_conditional_sample, sample_circle_model, write_csv,
    CircleData, CircleModelConfig, PairedSet, UnpairedSet,
};
pub use mixture::{Component, ConditionalMixture};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("invalid dataset config: {0}")]
    InvalidConfig(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}
