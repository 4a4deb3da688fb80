//! Conditional bridge training and inference for masked imputation.
//!
//! Two drift policies are trained in alternation: a forward field steering
//! data toward the prior and a backward field steering prior samples toward
//! the conditional data distribution. Training warm-starts the backward
//! policy with denoising score matching, then alternates likelihood stages
//! over cached trajectories; inference integrates the reverse SDE while
//! overwriting conditioned entries before every step.
//!
//! The backward network receives the conditioned state and the condition
//! mask; the forward network sees only the raw state. Both nets output a raw
//! field on the `K x L` grid. The backward net learns the variance-scaled
//! score `var(t) * grad log p`, whose score-matching regression target is the
//! bounded quantity `mean - x_t`; the drift field applied during integration
//! is `g(t)/var(t)` times the raw output.

mod infer;
mod loss;
mod train;

pub use infer::{impute, langevin_correct, langevin_correct_with_score, ImputeConfig};
pub use loss::{
    backward_loss, backward_loss_with_probes, forward_loss, forward_loss_with_probes,
    BackwardSample, BatchLoss, ForwardSample,
};
pub use train::{dsm_warmup, train, train_score_only};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neural::{
    embed, mlp_forward, AdamwConfig, EmbeddingSpec, MlpParams, NeuralError, OptimizerState,
};
use crate::sde::{diffusion_coefficient, PathSample, SdeError, SdeSpec};

/// Floor applied to the accumulated kernel variance before dividing by it,
/// guarding the backward-field scale near time zero.
pub(crate) const VAR_FLOOR: f64 = 1e-12;

/// Errors for training and inference.
#[derive(Debug, Error)]
pub enum CsbiError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("trajectory cache is stale: staleness {staleness} exceeds refresh period {period}")]
    StaleCache { staleness: usize, period: usize },
    #[error("non-finite loss at stage {stage}, iteration {iter}, direction {direction:?}")]
    Divergence {
        stage: usize,
        iter: usize,
        direction: Direction,
    },
    #[error("non-finite state in sample {sample} at step {step}")]
    NonFiniteSample { sample: usize, step: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
}

/// Which policy a log record or error refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Warmup,
    Backward,
    Forward,
}

/// How divergence terms inside the likelihood losses are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DivergenceMode {
    /// Coordinate-basis forward-mode passes; exact, `|mask|` passes per
    /// evaluation.
    Exact,
    /// Rademacher probe estimate with the given probe count.
    Hutchinson { n_probes: usize },
}

/// Full training configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Score-matching warmup iterations before the alternating stages.
    pub warmup_iters: usize,
    /// Number of alternating stages; zero trains the score-matching-only
    /// model.
    pub n_stages: usize,
    /// Gradient steps per direction per stage.
    pub iters_per_stage: usize,
    /// Iterations between trajectory-cache refreshes.
    pub cache_refresh_period: usize,
    /// Paths per cache (also the per-iteration batch size).
    pub batch_size: usize,
    /// Backward-policy learning rate (also used by warmup).
    pub lr_backward: f64,
    /// Forward-policy learning rate.
    pub lr_forward: f64,
    /// Per-step exponential learning-rate decay for both optimizers.
    pub lr_decay: f64,
    /// Divergence estimator used inside the likelihood losses.
    pub divergence: DivergenceMode,
    /// Hidden layer widths shared by both networks.
    pub hidden_widths: Vec<usize>,
    /// Embedding block widths.
    pub embedding: EmbeddingSpec,
    /// Noising schedule and discretization.
    pub sde: SdeSpec,
    /// Redraw each window's condition/target split from its observation mask
    /// every time it enters a batch, using the dataset's own strategy.
    pub resample_masks: bool,
    /// Root seed; all randomness derives from counter-keyed streams of it.
    pub seed: u64,
}

impl TrainConfig {
    /// Desk-scale defaults sized so a full train-and-evaluate cycle runs in
    /// minutes on one core.
    pub fn desk(sde: SdeSpec, seed: u64) -> Self {
        Self {
            warmup_iters: 2000,
            n_stages: 8,
            iters_per_stage: 120,
            cache_refresh_period: 40,
            batch_size: 32,
            lr_backward: 1e-3,
            lr_forward: 1e-4,
            lr_decay: 0.9995,
            divergence: DivergenceMode::Exact,
            hidden_widths: vec![64, 64],
            embedding: EmbeddingSpec {
                diffusion_width: 32,
                feature_width: 8,
                time_width: 8,
            },
            sde,
            resample_masks: true,
            seed,
        }
    }

    /// Check all field invariants.
    pub fn validate(&self) -> Result<(), CsbiError> {
        self.sde.validate().map_err(CsbiError::Sde)?;
        if self.iters_per_stage == 0 && self.n_stages > 0 {
            return Err(CsbiError::InvalidConfig(
                "iters_per_stage must be at least 1 when stages run".into(),
            ));
        }
        if self.cache_refresh_period == 0 {
            return Err(CsbiError::InvalidConfig(
                "cache_refresh_period must be at least 1".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(CsbiError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.lr_backward > 0.0 && self.lr_forward > 0.0) {
            return Err(CsbiError::InvalidConfig(
                "learning rates must be positive".into(),
            ));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(CsbiError::InvalidConfig(
                "lr_decay must be in (0, 1]".into(),
            ));
        }
        if let DivergenceMode::Hutchinson { n_probes } = self.divergence {
            if n_probes == 0 {
                return Err(CsbiError::InvalidConfig(
                    "hutchinson mode needs at least one probe".into(),
                ));
            }
        }
        Ok(())
    }
}

/// One training-log line; serializes to JSON lines with a `type` tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogEntry {
    /// One gradient step.
    Iteration {
        stage: usize,
        iter: usize,
        direction: Direction,
        loss: f64,
        lr: f64,
    },
    /// A trajectory-cache rebuild.
    CacheRefresh {
        stage: usize,
        iter: usize,
        direction: Direction,
        n_paths: usize,
    },
}

/// Render a training log as JSON lines.
pub fn log_to_json_lines(log: &[LogEntry]) -> String {
    let mut out = String::new();
    for entry in log {
        out.push_str(&serde_json::to_string(entry).expect("log entries serialize"));
        out.push('\n');
    }
    out
}

/// One cached trajectory plus the conditioning context it was sampled under.
#[derive(Debug, Clone)]
pub struct CachedPath {
    /// The sampled trajectory on the schedule grid.
    pub path: PathSample,
    /// Conditioning values (zero outside the condition mask).
    pub x_cond: Vec<f64>,
    /// Condition mask.
    pub m_cond: Vec<u8>,
    /// Target mask the loss is restricted to.
    pub m_target: Vec<u8>,
}

/// A batch of cached trajectories with a staleness guard: items may be used
/// for at most `refresh_period` iterations after creation.
#[derive(Debug, Clone)]
pub struct TrajectoryCache {
    items: Vec<CachedPath>,
    staleness: usize,
    refresh_period: usize,
}

impl TrajectoryCache {
    /// Wrap freshly sampled paths.
    pub fn new(items: Vec<CachedPath>, refresh_period: usize) -> Self {
        Self {
            items,
            staleness: 0,
            refresh_period,
        }
    }

    /// Access the cached paths, failing if they are older than the refresh
    /// period allows.
    pub fn items(&self) -> Result<&[CachedPath], CsbiError> {
        if self.staleness > self.refresh_period {
            return Err(CsbiError::StaleCache {
                staleness: self.staleness,
                period: self.refresh_period,
            });
        }
        Ok(&self.items)
    }

    /// Count one iteration of use.
    pub fn tick(&mut self) {
        self.staleness += 1;
    }

    /// Iterations since the cache was built.
    pub fn staleness(&self) -> usize {
        self.staleness
    }
}

/// The two policy networks with their optimizers and shared embedding.
#[derive(Debug, Clone)]
pub struct PolicyPair {
    /// Forward policy network (raw state in, grid field out).
    pub forward: MlpParams,
    /// Backward policy network (conditioned state and mask in, grid field
    /// out).
    pub backward: MlpParams,
    /// Embedding spec shared by both networks.
    pub embedding: EmbeddingSpec,
    /// Optimizer state of the forward policy.
    pub forward_opt: OptimizerState,
    /// Optimizer state of the backward policy.
    pub backward_opt: OptimizerState,
    /// Feature count of the grid both nets operate on.
    pub n_features: usize,
    /// Time count of the grid.
    pub n_times: usize,
}

impl PolicyPair {
    /// Initialize both networks for a `K x L` grid. Hidden layers use
    /// fan-based uniform init; each output layer starts at exactly zero so
    /// both policies begin as the uncontrolled SDE. The forward net draws
    /// from init stream 0, the backward net from init stream 1.
    pub fn init(cfg: &TrainConfig, n_features: usize, n_times: usize) -> Result<Self, CsbiError> {
        let d = n_features * n_times;
        if d == 0 {
            return Err(CsbiError::InvalidConfig("empty grid".into()));
        }
        let emb_w = cfg.embedding.total_width();
        let mut fwd_widths = vec![d + emb_w];
        fwd_widths.extend_from_slice(&cfg.hidden_widths);
        fwd_widths.push(d);
        let mut bwd_widths = vec![2 * d + emb_w];
        bwd_widths.extend_from_slice(&cfg.hidden_widths);
        bwd_widths.push(d);

        let mut fwd_rng = crate::rng::stream(cfg.seed, crate::rng::domain::INIT, 0);
        let mut forward = MlpParams::init(&fwd_widths, &mut fwd_rng)?;
        zero_output_layer(&mut forward);
        let mut bwd_rng = crate::rng::stream(cfg.seed, crate::rng::domain::INIT, 1);
        let mut backward = MlpParams::init(&bwd_widths, &mut bwd_rng)?;
        zero_output_layer(&mut backward);

        let forward_opt = OptimizerState::new(
            forward.n_params(),
            AdamwConfig {
                lr: cfg.lr_forward,
                lr_decay: cfg.lr_decay,
                ..AdamwConfig::default()
            },
        )?;
        let backward_opt = OptimizerState::new(
            backward.n_params(),
            AdamwConfig {
                lr: cfg.lr_backward,
                lr_decay: cfg.lr_decay,
                ..AdamwConfig::default()
            },
        )?;
        Ok(Self {
            forward,
            backward,
            embedding: cfg.embedding,
            forward_opt,
            backward_opt,
            n_features,
            n_times,
        })
    }

    /// Grid size `K * L` both fields live on.
    pub fn grid_len(&self) -> usize {
        self.n_features * self.n_times
    }
}

/// Zero the final affine layer so the net's output starts at exactly zero.
pub(crate) fn zero_output_layer(p: &mut MlpParams) {
    let widths = p.widths().to_vec();
    let n_layers = widths.len() - 1;
    let last = widths[n_layers] * widths[n_layers - 1] + widths[n_layers];
    let n = p.n_params();
    for v in &mut p.data_mut()[n - last..] {
        *v = 0.0;
    }
}

/// Backward-network input: conditioned state (condition values overwrite the
/// state on the condition mask), the mask itself, then the embedding block.
pub(crate) fn backward_input(
    x: &[f64],
    x_cond: &[f64],
    m_cond: &[u8],
    emb_block: &[f64],
) -> Vec<f64> {
    let d = x.len();
    let mut input = Vec::with_capacity(2 * d + emb_block.len());
    for i in 0..d {
        input.push(if m_cond[i] != 0 { x_cond[i] } else { x[i] });
    }
    input.extend(m_cond.iter().map(|&m| m as f64));
    input.extend_from_slice(emb_block);
    input
}

/// Forward-network input: raw state then the embedding block; no masks.
pub(crate) fn forward_input(x: &[f64], emb_block: &[f64]) -> Vec<f64> {
    let mut input = Vec::with_capacity(x.len() + emb_block.len());
    input.extend_from_slice(x);
    input.extend_from_slice(emb_block);
    input
}

/// Scales applied to the raw network outputs at time `t`: the backward field
/// is `g(t)/var(t) * net` (the net holds the variance-scaled score) and the
/// forward field is `g(t) * net`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct FieldScales {
    pub g: f64,
    /// `g / max(var(t), floor)`.
    pub a_b: f64,
}

pub(crate) fn field_scales(spec: &SdeSpec, t: f64) -> Result<FieldScales, SdeError> {
    let g = diffusion_coefficient(spec, t)?;
    let var = spec.accumulated_var(t).max(VAR_FLOOR);
    Ok(FieldScales { g, a_b: g / var })
}

/// Embedding block at diffusion time `t`, normalized by the horizon.
pub(crate) fn embed_at(
    emb: &EmbeddingSpec,
    spec: &SdeSpec,
    t: f64,
    n_features: usize,
    n_times: usize,
) -> Vec<f64> {
    embed(emb, t / spec.t_end, n_features, n_times)
}

/// Backward drift field `z(x, t)` under conditioning, ready for the
/// reverse-SDE integrator.
pub(crate) fn backward_field(
    net: &MlpParams,
    emb: &EmbeddingSpec,
    spec: &SdeSpec,
    x: &[f64],
    x_cond: &[f64],
    m_cond: &[u8],
    t: f64,
    n_features: usize,
    n_times: usize,
) -> Vec<f64> {
    let scales = field_scales(spec, t).expect("grid time in range");
    let block = embed_at(emb, spec, t, n_features, n_times);
    let input = backward_input(x, x_cond, m_cond, &block);
    let out = mlp_forward(net, &input).expect("backward net width fixed at construction");
    out.into_iter().map(|v| scales.a_b * v).collect()
}

/// Forward drift field `z(x, t)` for the forward-SDE integrator.
pub(crate) fn forward_field(
    net: &MlpParams,
    emb: &EmbeddingSpec,
    spec: &SdeSpec,
    x: &[f64],
    t: f64,
    n_features: usize,
    n_times: usize,
) -> Vec<f64> {
    let scales = field_scales(spec, t).expect("grid time in range");
    let block = embed_at(emb, spec, t, n_features, n_times);
    let input = forward_input(x, &block);
    let out = mlp_forward(net, &input).expect("forward net width fixed at construction");
    out.into_iter().map(|v| scales.g * v).collect()
}
