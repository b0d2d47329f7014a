//! Exact optimal-transport distances and f-divergences.

pub mod assignment;
pub mod divergence;
pub mod w1;

pub use assignment::{brute_force, hungarian, AssignmentSolver, CostMatrix};
pub use divergence::{divergence_bound_check, f_divergence, BoundCheck, DivergenceKind, Histogram};
pub use w1::{w1_1d_weighted, w1_exact_equal, w1_exact_equal_with, DiscreteDist1D, EmpiricalSample, Matching};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OtError {
    #[error("sample counts differ: {0} vs {1}")]
    CountMismatch(usize, usize),
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error("empty input")]
    Empty,
    #[error("non-finite input")]
    NonFinite,
    #[error("support is not strictly increasing")]
    Unsorted,
    #[error("probabilities must be nonnegative and sum to 1 (sum = {0})")]
    Unnormalized(f64),
    #[error("support mismatch: {0}")]
    SupportMismatch(String),
    #[error("{kind} needs q = 0 ⇒ p = 0, violated at bin {bin}")]
    AbsoluteContinuity { kind: DivergenceKind, bin: usize },
}
