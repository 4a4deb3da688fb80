//! `sbkit eval`: score an imputation ensemble against the dataset it was
//! drawn for.
//!
//! Pools every target entry of every imputed window and writes one
//! `metrics.json` report (RMSE and MAE of the per-entry median, CRPS in both
//! conventions).

use super::require_path;
use crate::artifacts::{load_samples, read_config, write_run_manifest};
use crate::fail::Failure;
use sbkit_core::data::load_dataset;
use sbkit_core::metrics::evaluate;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::PathBuf;

/// Resolved configuration for one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalCmdConfig {
    pub out_dir: String,
    /// Sample tensor written by the impute command.
    pub samples: Option<String>,
    /// Dataset holding the ground truth.
    pub dataset: Option<String>,
}

impl Default for EvalCmdConfig {
    fn default() -> Self {
        Self {
            out_dir: "out/eval".into(),
            samples: None,
            dataset: None,
        }
    }
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct EvalArgs {
    /// JSON config file; flags override file values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Sample tensor file.
    #[arg(long)]
    pub samples: Option<PathBuf>,
    /// Dataset with ground truth.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

pub fn resolve(args: &EvalArgs) -> Result<EvalCmdConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => read_config::<EvalCmdConfig>(path)?,
        None => EvalCmdConfig::default(),
    };
    if let Some(out) = &args.out {
        cfg.out_dir = out.display().to_string();
    }
    if let Some(samples) = &args.samples {
        cfg.samples = Some(samples.display().to_string());
    }
    if let Some(dataset) = &args.dataset {
        cfg.dataset = Some(dataset.display().to_string());
    }
    if cfg.samples.is_none() {
        return Err(Failure::validation("missing required input: --samples"));
    }
    if cfg.dataset.is_none() {
        return Err(Failure::validation("missing required input: --dataset"));
    }
    Ok(cfg)
}

pub fn run(args: &EvalArgs) -> Result<(), Failure> {
    let cfg = resolve(args)?;
    let samples_path = require_path(&cfg.samples, "--samples")?;
    let dataset_path = require_path(&cfg.dataset, "--dataset")?;
    let out_dir = PathBuf::from(&cfg.out_dir);
    write_run_manifest(&out_dir, &cfg)?;

    let tensor = load_samples(&samples_path)?;
    let dataset = load_dataset(&dataset_path)?;
    if dataset.config.n_features != tensor.header.n_features
        || dataset.config.n_times != tensor.header.n_times
    {
        return Err(Failure::validation(format!(
            "dataset grid {}x{} does not match sample grid {}x{}",
            dataset.config.n_features,
            dataset.config.n_times,
            tensor.header.n_features,
            tensor.header.n_times
        )));
    }

    let mut truth = Vec::new();
    let mut target = Vec::new();
    let mut pooled: Vec<Vec<f64>> = vec![Vec::new(); tensor.header.n_samples];
    for (w, masks) in tensor.header.windows.iter().enumerate() {
        let window = dataset.windows.get(masks.index).ok_or_else(|| {
            Failure::validation(format!(
                "sample file references window {} but the dataset has {}",
                masks.index,
                dataset.windows.len()
            ))
        })?;
        truth.extend_from_slice(window.values());
        target.extend_from_slice(&masks.target);
        for (s, pool) in pooled.iter_mut().enumerate() {
            pool.extend_from_slice(&tensor.samples[w][s]);
        }
    }

    let report = evaluate(&pooled, &truth, &target)?;
    let mut body = serde_json::to_string_pretty(&report)?;
    body.push('\n');
    fs::write(out_dir.join("metrics.json"), body)?;

    println!(
        "rmse {:.6} mae {:.6} crps {:.6} over {} target entries and {} samples",
        report.rmse, report.mae, report.crps, report.n_target_entries, report.n_samples
    );
    Ok(())
}
