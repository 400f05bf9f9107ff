//! Nash preference optimization at desk scale.
//!
//! Two halves share this crate. The `tabular` module is an exact engine for
//! KL-regularized two-player preference games on discrete action sets:
//! exponential-weights updates, best responses, duality gaps, and Nash
//! solving. The remaining modules train a toy conditional diffusion model
//! on synthetic 2-D mixtures with a family of pairwise preference losses
//! (denoising, DPO-style, NPO-style, pure self-play, squared-distance),
//! driven by synthetic transitive and intransitive preference oracles.

pub mod checkpoint;
pub mod config;
pub mod denoiser;
pub mod eval;
pub mod losses;
pub mod oracles;
pub mod plot;
pub mod rng;
pub mod schedule;
pub mod tabular;
pub mod toydata;
pub mod trainer;

use thiserror::Error as ThisError;

#[derive(Debug, ThisError)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("schedule: {0}")]
    Schedule(String),
    #[error("config: {0}")]
    Config(String),
    #[error("preference matrix: {0}")]
    Matrix(String),
    #[error("policy: {0}")]
    Policy(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
