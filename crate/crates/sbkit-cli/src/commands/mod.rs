//! Subcommand implementations. Each command resolves its configuration
//! (defaults, then config file, then flags), validates it before doing any
//! work, echoes the resolved config into the output directory, and writes
//! its artifacts there.

pub mod eval;
pub mod gen_data;
pub mod impute;
pub mod sinkhorn;
pub mod train;

use crate::fail::Failure;
use sbkit_core::data::TargetStrategy;
use std::path::PathBuf;

/// Strategy names accepted by `--strategy`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum StrategyName {
    /// Keep the condition/target split stored in the dataset (impute only).
    Dataset,
    /// One random run of `--block-len` consecutive time points per feature.
    Block,
    /// Each observed entry is a target with probability `--target-ratio`.
    Random,
    /// Everything from time index `--context-len` onward is a target.
    Forecast,
}

/// Shared flag triple parameterizing the target strategies.
#[derive(Debug, Clone, Copy, Default, clap::Args)]
pub struct StrategyParams {
    /// Consecutive-block target length (with `--strategy block`).
    #[arg(long)]
    pub block_len: Option<usize>,
    /// Per-entry target probability (with `--strategy random`).
    #[arg(long)]
    pub target_ratio: Option<f64>,
    /// Context length before the forecast horizon (with `--strategy forecast`).
    #[arg(long)]
    pub context_len: Option<usize>,
}

impl StrategyParams {
    pub fn any_set(&self) -> bool {
        self.block_len.is_some() || self.target_ratio.is_some() || self.context_len.is_some()
    }

    /// Build the strategy named by `--strategy block|random|forecast`; the
    /// matching parameter flag is required.
    pub fn build(&self, name: StrategyName) -> Result<TargetStrategy, Failure> {
        match name {
            StrategyName::Dataset => Err(Failure::validation(
                "choose a concrete strategy: block, random, or forecast",
            )),
            StrategyName::Block => self
                .block_len
                .map(|len| TargetStrategy::ConsecutiveBlock { len })
                .ok_or_else(|| Failure::validation("--strategy block requires --block-len")),
            StrategyName::Random => self
                .target_ratio
                .map(|ratio| TargetStrategy::RandomRatio { ratio })
                .ok_or_else(|| Failure::validation("--strategy random requires --target-ratio")),
            StrategyName::Forecast => self
                .context_len
                .map(|context_len| TargetStrategy::Forecast { context_len })
                .ok_or_else(|| Failure::validation("--strategy forecast requires --context-len")),
        }
    }
}

/// A path field that must be present after merging config and flags.
pub fn require_path(value: &Option<String>, what: &str) -> Result<PathBuf, Failure> {
    value
        .as_ref()
        .map(PathBuf::from)
        .ok_or_else(|| Failure::validation(format!("missing required input: {what}")))
}

/// Require a finite value, for numeric flag validation.
pub fn require_finite(value: f64, what: &str) -> Result<f64, Failure> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Failure::validation(format!("{what} must be finite, got {value}")))
    }
}
