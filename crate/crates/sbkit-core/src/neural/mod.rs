//! Differentiable-function substrate: multilayer perceptrons with SiLU
//! hidden activations, reverse-mode gradients, forward-mode directional
//! derivatives that are themselves differentiable, exact and stochastic
//! divergences, AdamW with per-step exponential learning-rate decay,
//! sinusoidal embeddings, and flat binary checkpoints.
//!
//! Everything is 64-bit and deterministic: identical seeds and configs
//! produce bitwise-identical parameters after any number of steps.

mod checkpoint;
mod embed;
mod mlp;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use embed::{embed, EmbeddingSpec};
pub use mlp::{
    divergence_exact, divergence_hutchinson, mlp_forward, mlp_grad, mlp_jvp, mlp_jvp_grad,
    JvpGrad, MlpParams,
};
pub use optim::{adamw_step, AdamwConfig, OptimizerState};

use thiserror::Error;

/// Errors for network evaluation, optimization, and checkpoint IO.
#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("input width mismatch: expected {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("vector field is not square: input width {input}, output width {output}")]
    NonSquareField { input: usize, output: usize },
    #[error("non-finite gradient at optimizer step {step}")]
    NonFiniteGradient { step: u64 },
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
