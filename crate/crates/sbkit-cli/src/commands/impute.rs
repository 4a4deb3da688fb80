//! `sbkit impute`: posterior sampling of masked entries from a trained
//! checkpoint.
//!
//! Writes `samples.jsonl` (a header declaring the ensemble shape and the
//! masks used, then one line per sample) and `summary.csv` (per-entry
//! median and 10/90% quantiles across the ensemble). `--strategy forecast`
//! remasks each window so everything after the context window is predicted.

use super::{require_path, StrategyName, StrategyParams};
use crate::artifacts::{
    read_config, save_samples, write_run_manifest, Checkpoint, SampleTensor, TensorHeader,
    WindowMasks,
};
use crate::fail::Failure;
use sbkit_core::csbi::{impute, ImputeConfig};
use sbkit_core::data::{load_dataset, make_masks, MaskSet, TargetStrategy};
use sbkit_core::metrics::sample_quantiles;
use sbkit_core::rng::{self, domain};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::PathBuf;

/// Salt mixed into the seed of mask-regeneration streams so they never
/// collide with dataset-generation streams of the same seed.
const REMASK_SALT: u64 = 0x7265_6d61_736b;

/// Where the condition/target split of each imputed window comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum MaskSource {
    /// The split stored in the dataset.
    Dataset,
    /// A fresh split drawn from the window's observation mask.
    Regenerate { strategy: TargetStrategy },
}

/// Resolved configuration for one imputation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImputeCmdConfig {
    pub out_dir: String,
    /// Trained checkpoint to sample from.
    pub checkpoint: Option<String>,
    /// Dataset providing conditioning values and masks.
    pub dataset: Option<String>,
    /// Ensemble size per window.
    pub n_samples: usize,
    /// Number of leading dataset windows to impute; 0 means every window.
    pub max_windows: usize,
    /// Langevin corrector steps per grid time; 0 disables the corrector.
    pub n_corrector_steps: usize,
    /// Corrector signal-to-noise target.
    pub snr: f64,
    pub seed: u64,
    pub masks: MaskSource,
}

impl Default for ImputeCmdConfig {
    fn default() -> Self {
        Self {
            out_dir: "out/impute".into(),
            checkpoint: None,
            dataset: None,
            n_samples: 100,
            max_windows: 4,
            n_corrector_steps: 0,
            snr: 0.16,
            seed: 0,
            masks: MaskSource::Dataset,
        }
    }
}

impl ImputeCmdConfig {
    pub fn validate(&self) -> Result<(), Failure> {
        if self.n_samples == 0 {
            return Err(Failure::validation("n_samples must be at least 1"));
        }
        if !(self.snr > 0.0 && self.snr.is_finite()) {
            return Err(Failure::validation(format!(
                "snr must be positive and finite, got {}",
                self.snr
            )));
        }
        if self.checkpoint.is_none() {
            return Err(Failure::validation("missing required input: --checkpoint"));
        }
        if self.dataset.is_none() {
            return Err(Failure::validation("missing required input: --dataset"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct ImputeArgs {
    /// JSON config file; flags override file values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Trained checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset providing conditions.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Ensemble size per window.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Leading windows to impute; 0 means all.
    #[arg(long)]
    pub max_windows: Option<usize>,
    /// Langevin corrector steps per grid time.
    #[arg(long)]
    pub corrector_steps: Option<usize>,
    /// Corrector signal-to-noise target.
    #[arg(long)]
    pub snr: Option<f64>,
    /// Sampling seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Mask source: dataset keeps stored splits, the rest redraw them.
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyName>,
    #[command(flatten)]
    pub strategy_params: StrategyParams,
}

pub fn resolve(args: &ImputeArgs) -> Result<ImputeCmdConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => read_config::<ImputeCmdConfig>(path)?,
        None => ImputeCmdConfig::default(),
    };
    if let Some(out) = &args.out {
        cfg.out_dir = out.display().to_string();
    }
    if let Some(ckpt) = &args.checkpoint {
        cfg.checkpoint = Some(ckpt.display().to_string());
    }
    if let Some(dataset) = &args.dataset {
        cfg.dataset = Some(dataset.display().to_string());
    }
    if let Some(n) = args.samples {
        cfg.n_samples = n;
    }
    if let Some(n) = args.max_windows {
        cfg.max_windows = n;
    }
    if let Some(n) = args.corrector_steps {
        cfg.n_corrector_steps = n;
    }
    if let Some(snr) = args.snr {
        cfg.snr = snr;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    match args.strategy {
        Some(StrategyName::Dataset) => cfg.masks = MaskSource::Dataset,
        Some(name) => {
            cfg.masks = MaskSource::Regenerate {
                strategy: args.strategy_params.build(name)?,
            };
        }
        None if args.strategy_params.any_set() => {
            return Err(Failure::validation(
                "strategy parameter flags require --strategy",
            ));
        }
        None => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(args: &ImputeArgs) -> Result<(), Failure> {
    let cfg = resolve(args)?;
    let ckpt_path = require_path(&cfg.checkpoint, "--checkpoint")?;
    let dataset_path = require_path(&cfg.dataset, "--dataset")?;
    let out_dir = PathBuf::from(&cfg.out_dir);
    write_run_manifest(&out_dir, &cfg)?;

    let ckpt = Checkpoint::load(&ckpt_path)?;
    let backward = ckpt.backward.to_params()?;
    let dataset = load_dataset(&dataset_path)?;
    if dataset.config.n_features != ckpt.n_features || dataset.config.n_times != ckpt.n_times {
        return Err(Failure::validation(format!(
            "dataset grid {}x{} does not match checkpoint grid {}x{}",
            dataset.config.n_features,
            dataset.config.n_times,
            ckpt.n_features,
            ckpt.n_times
        )));
    }

    let n_windows = if cfg.max_windows == 0 {
        dataset.windows.len()
    } else {
        cfg.max_windows.min(dataset.windows.len())
    };
    let base = ImputeConfig {
        sde: ckpt.sde.clone(),
        n_corrector_steps: cfg.n_corrector_steps,
        snr: cfg.snr,
        seed: cfg.seed,
    };

    let mut window_masks = Vec::with_capacity(n_windows);
    let mut ensembles = Vec::with_capacity(n_windows);
    for w in 0..n_windows {
        let window = &dataset.windows[w];
        let masks: MaskSet = match &cfg.masks {
            MaskSource::Dataset => window.masks().clone(),
            MaskSource::Regenerate { strategy } => make_masks(
                ckpt.n_features,
                ckpt.n_times,
                window.masks().obs().to_vec(),
                *strategy,
                &mut rng::stream(rng::mix(cfg.seed ^ REMASK_SALT), domain::DATA, w as u64),
            )?,
        };
        let x_cond: Vec<f64> = window
            .values()
            .iter()
            .zip(masks.cond())
            .map(|(&v, &c)| if c != 0 { v } else { 0.0 })
            .collect();
        let mut wcfg = base.clone();
        wcfg.seed = cfg.seed.wrapping_add(w as u64);
        let ensemble = impute(&backward, &ckpt.embedding, &x_cond, &masks, cfg.n_samples, &wcfg)?;
        window_masks.push(WindowMasks {
            index: w,
            cond: masks.cond().to_vec(),
            target: masks.target().to_vec(),
        });
        ensembles.push(ensemble);
    }

    let tensor = SampleTensor {
        header: TensorHeader {
            version: 1,
            n_samples: cfg.n_samples,
            n_features: ckpt.n_features,
            n_times: ckpt.n_times,
            windows: window_masks,
        },
        samples: ensembles,
    };
    let samples_path = out_dir.join("samples.jsonl");
    save_samples(&samples_path, &tensor)?;

    let mut summary = String::from("window,feature,time,cond,target,median,q10,q90\n");
    for (w, ensemble) in tensor.samples.iter().enumerate() {
        let masks = &tensor.header.windows[w];
        let median = sample_quantiles(ensemble, 0.5)?;
        let q10 = sample_quantiles(ensemble, 0.1)?;
        let q90 = sample_quantiles(ensemble, 0.9)?;
        for k in 0..ckpt.n_features {
            for j in 0..ckpt.n_times {
                let i = k * ckpt.n_times + j;
                summary.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    masks.index, k, j, masks.cond[i], masks.target[i], median[i], q10[i], q90[i]
                ));
            }
        }
    }
    fs::write(out_dir.join("summary.csv"), summary)?;

    println!(
        "imputed {} windows with {} samples each; wrote {}",
        tensor.samples.len(),
        cfg.n_samples,
        samples_path.display()
    );
    Ok(())
}
