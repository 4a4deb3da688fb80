//! Schrödinger-bridge toolkit: discrete entropic optimal transport with
//! approximate iterative proportional fitting on one side, and conditional
//! bridge training/inference for probabilistic time-series imputation on the
//! other. Both halves share one SDE substrate (schedules, kernels, samplers).
//!
//! All numerics are f64. Every randomized operation draws from an explicit
//! counter-keyed stream so results are reproducible and independent of
//! thread scheduling.

pub mod csbi;
pub mod data;
pub mod eot;
pub mod metrics;
pub mod neural;
pub mod rng;
pub mod sde;

pub use csbi::{
    CsbiError, Direction, DivergenceMode, ImputeConfig, LogEntry, PolicyPair, TrainConfig,
    TrajectoryCache,
};
pub use data::{DataError, Dataset, MaskSet, SignalConfig, TargetStrategy, TimeSeriesWindow};
pub use eot::{ConvergenceTrace, CouplingMatrix, DiscreteMarginal, EotError, PotentialPair, TraceRecord};
pub use metrics::{MetricError, MetricReport};
pub use neural::{AdamwConfig, EmbeddingSpec, MlpParams, NeuralError, OptimizerState};
pub use sde::{GaussianKernel, PathSample, SdeError, SdeKind, SdeSpec};
