//! `sbkit train`: alternating bridge training on a generated dataset.
//!
//! Writes `checkpoint.json` (both policy networks plus the schedule and
//! shapes inference needs) and `train_log.jsonl` (one JSON object per
//! optimizer step or cache refresh). `--stages 0` trains the score-matching
//! warmup only, which is the zero-forward-policy baseline model.

use crate::artifacts::{read_config, write_run_manifest, Checkpoint};
use crate::fail::Failure;
use sbkit_core::csbi::{log_to_json_lines, train, TrainConfig};
use sbkit_core::data::load_dataset;
use sbkit_core::sde::{SdeKind, SdeSpec};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

/// Resolved configuration for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCmdConfig {
    pub out_dir: String,
    /// Path of the dataset to train on.
    pub dataset: Option<String>,
    pub train: TrainConfig,
}

impl Default for TrainCmdConfig {
    fn default() -> Self {
        Self {
            out_dir: "out/train".into(),
            dataset: None,
            train: TrainConfig::desk(default_sde(), 0),
        }
    }
}

fn default_sde() -> SdeSpec {
    SdeSpec::ve(0.05, 2.5, 100).expect("default schedule parameters are valid")
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct TrainArgs {
    /// JSON config file; flags override file values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dataset to train on.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Root training seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Score-matching warmup iterations.
    #[arg(long)]
    pub warmup_iters: Option<usize>,
    /// Alternating stages; 0 keeps the forward policy at zero.
    #[arg(long)]
    pub stages: Option<usize>,
    /// Gradient steps per direction per stage.
    #[arg(long)]
    pub iters_per_stage: Option<usize>,
    /// Iterations between trajectory-cache refreshes.
    #[arg(long)]
    pub cache_refresh: Option<usize>,
    /// Paths per cache refresh and samples per gradient step.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Backward-policy learning rate.
    #[arg(long)]
    pub lr_backward: Option<f64>,
    /// Forward-policy learning rate.
    #[arg(long)]
    pub lr_forward: Option<f64>,
    /// Per-step exponential learning-rate decay.
    #[arg(long)]
    pub lr_decay: Option<f64>,
    /// Comma-separated hidden layer widths, e.g. `64,64`.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// Noising schedule kind.
    #[arg(long, value_enum)]
    pub sde_kind: Option<SdeKindName>,
    #[arg(long)]
    pub sigma_min: Option<f64>,
    #[arg(long)]
    pub sigma_max: Option<f64>,
    #[arg(long)]
    pub beta_min: Option<f64>,
    #[arg(long)]
    pub beta_max: Option<f64>,
    /// Discretization steps of the schedule grid.
    #[arg(long)]
    pub sde_steps: Option<usize>,
    /// Redraw condition/target splits each time a window enters a batch.
    #[arg(long)]
    pub resample_masks: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SdeKindName {
    Ve,
    Vp,
}

pub fn resolve(args: &TrainArgs) -> Result<TrainCmdConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => read_config::<TrainCmdConfig>(path)?,
        None => TrainCmdConfig::default(),
    };
    if let Some(out) = &args.out {
        cfg.out_dir = out.display().to_string();
    }
    if let Some(dataset) = &args.dataset {
        cfg.dataset = Some(dataset.display().to_string());
    }
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    if let Some(n) = args.warmup_iters {
        cfg.train.warmup_iters = n;
    }
    if let Some(n) = args.stages {
        cfg.train.n_stages = n;
    }
    if let Some(n) = args.iters_per_stage {
        cfg.train.iters_per_stage = n;
    }
    if let Some(n) = args.cache_refresh {
        cfg.train.cache_refresh_period = n;
    }
    if let Some(n) = args.batch_size {
        cfg.train.batch_size = n;
    }
    if let Some(lr) = args.lr_backward {
        cfg.train.lr_backward = lr;
    }
    if let Some(lr) = args.lr_forward {
        cfg.train.lr_forward = lr;
    }
    if let Some(decay) = args.lr_decay {
        cfg.train.lr_decay = decay;
    }
    if let Some(hidden) = &args.hidden {
        cfg.train.hidden_widths = hidden.clone();
    }
    if let Some(kind) = args.sde_kind {
        cfg.train.sde.kind = match kind {
            SdeKindName::Ve => SdeKind::Ve,
            SdeKindName::Vp => SdeKind::Vp,
        };
    }
    if let Some(v) = args.sigma_min {
        cfg.train.sde.sigma_min = v;
    }
    if let Some(v) = args.sigma_max {
        cfg.train.sde.sigma_max = v;
    }
    if let Some(v) = args.beta_min {
        cfg.train.sde.beta_min = v;
    }
    if let Some(v) = args.beta_max {
        cfg.train.sde.beta_max = v;
    }
    if let Some(n) = args.sde_steps {
        cfg.train.sde.n_steps = n;
    }
    if let Some(resample) = args.resample_masks {
        cfg.train.resample_masks = resample;
    }
    cfg.train.sde.validate()?;
    cfg.train.validate()?;
    if cfg.dataset.is_none() {
        return Err(Failure::validation("missing required input: --dataset"));
    }
    Ok(cfg)
}

pub fn run(args: &TrainArgs) -> Result<(), Failure> {
    let cfg = resolve(args)?;
    let dataset_path = super::require_path(&cfg.dataset, "--dataset")?;
    let out_dir = PathBuf::from(&cfg.out_dir);
    write_run_manifest(&out_dir, &cfg)?;

    let dataset = load_dataset(&dataset_path)?;
    let started = Instant::now();
    let (pair, log) = train(&cfg.train, &dataset)?;
    let elapsed = started.elapsed().as_secs_f64();

    fs::write(out_dir.join("train_log.jsonl"), log_to_json_lines(&log))?;
    let ckpt_path = out_dir.join("checkpoint.json");
    Checkpoint::from_pair(&pair, &cfg.train.sde).save(&ckpt_path)?;

    println!(
        "trained {} warmup + {}x{} stage iterations in {:.1}s; wrote {}",
        cfg.train.warmup_iters,
        cfg.train.n_stages,
        cfg.train.iters_per_stage,
        elapsed,
        ckpt_path.display()
    );
    Ok(())
}
