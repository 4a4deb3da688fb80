//! `sbkit sinkhorn`: iterative-proportional-fitting convergence studies on a
//! seeded transport instance.
//!
//! For every projection-error scale in the list, runs the solver, writes the
//! per-iteration trace as CSV, and collects rate/bound diagnostics into
//! `summary.json`.

use crate::artifacts::{read_config, write_run_manifest};
use crate::fail::Failure;
use sbkit_core::eot::{benchmark_instance, diagnose_trace, run_aipf, DiagnoseOptions};
use sbkit_core::rng::{self, domain};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::fs;
use std::path::PathBuf;

/// Resolved configuration for one convergence study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SinkhornConfig {
    pub seed: u64,
    pub out_dir: String,
    /// Number of atoms per marginal of the seeded instance.
    pub grid_size: usize,
    /// Entropic regularization of the transport cost.
    pub reg_eps: f64,
    /// Projection-error scales to sweep; zero runs exact projections.
    pub eps_list: Vec<f64>,
    /// Solver iterations per sweep entry.
    pub n_iters: usize,
    /// Exact iterations of the oracle run estimating the optimal objective.
    pub oracle_iters: usize,
    /// Slack multiplier per unit of projection error in the diagnostics.
    pub slack: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: "out/sinkhorn".into(),
            grid_size: 16,
            reg_eps: 0.5,
            eps_list: vec![0.0, 1e-4, 1e-3, 1e-2],
            n_iters: 200,
            oracle_iters: 2000,
            slack: 10.0,
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<(), Failure> {
        if self.grid_size < 2 {
            return Err(Failure::validation(format!(
                "grid_size must be at least 2, got {}",
                self.grid_size
            )));
        }
        if !(self.reg_eps > 0.0 && self.reg_eps.is_finite()) {
            return Err(Failure::validation(format!(
                "reg_eps must be positive and finite, got {}",
                self.reg_eps
            )));
        }
        if self.eps_list.is_empty() {
            return Err(Failure::validation("eps_list must not be empty"));
        }
        for (i, eps) in self.eps_list.iter().enumerate() {
            if !(eps.is_finite() && *eps >= 0.0) {
                return Err(Failure::validation(format!(
                    "eps_list[{i}] must be finite and nonnegative, got {eps}"
                )));
            }
            if self.eps_list[..i].contains(eps) {
                return Err(Failure::validation(format!(
                    "eps_list contains duplicate value {eps}"
                )));
            }
        }
        if self.n_iters == 0 || self.oracle_iters == 0 {
            return Err(Failure::validation(
                "n_iters and oracle_iters must be at least 1",
            ));
        }
        if !(self.slack >= 0.0 && self.slack.is_finite()) {
            return Err(Failure::validation(format!(
                "slack must be finite and nonnegative, got {}",
                self.slack
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct SinkhornArgs {
    /// JSON config file; flags override file values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Instance seed; perturbation streams derive from it too.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Atoms per marginal.
    #[arg(long)]
    pub grid_size: Option<usize>,
    /// Entropic regularization of the cost.
    #[arg(long)]
    pub reg_eps: Option<f64>,
    /// Comma-separated projection-error scales, e.g. `0,1e-4,1e-2`.
    #[arg(long = "eps", value_delimiter = ',')]
    pub eps_list: Option<Vec<f64>>,
    /// Solver iterations per sweep entry.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Oracle iterations for the optimal-objective estimate.
    #[arg(long)]
    pub oracle_iters: Option<usize>,
    /// Diagnostic slack multiplier per unit of projection error.
    #[arg(long)]
    pub slack: Option<f64>,
}

pub fn resolve(args: &SinkhornArgs) -> Result<SinkhornConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => read_config::<SinkhornConfig>(path)?,
        None => SinkhornConfig::default(),
    };
    if let Some(out) = &args.out {
        cfg.out_dir = out.display().to_string();
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.grid_size {
        cfg.grid_size = n;
    }
    if let Some(reg) = args.reg_eps {
        cfg.reg_eps = reg;
    }
    if let Some(list) = &args.eps_list {
        cfg.eps_list = list.clone();
    }
    if let Some(n) = args.iters {
        cfg.n_iters = n;
    }
    if let Some(n) = args.oracle_iters {
        cfg.oracle_iters = n;
    }
    if let Some(s) = args.slack {
        cfg.slack = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(args: &SinkhornArgs) -> Result<(), Failure> {
    let cfg = resolve(args)?;
    let out_dir = PathBuf::from(&cfg.out_dir);
    write_run_manifest(&out_dir, &cfg)?;

    let (mu, nu, cost) = benchmark_instance(cfg.grid_size, cfg.reg_eps, cfg.seed)?;
    let mut oracle_rng = rng::stream(cfg.seed, domain::PERTURB_MU, u64::MAX);
    let oracle = run_aipf(&mu, &nu, &cost, 0.0, cfg.oracle_iters, &mut oracle_rng)?;
    let kl_star = oracle
        .records
        .last()
        .expect("oracle trace is nonempty")
        .objective;
    let opts = DiagnoseOptions {
        slack: cfg.slack,
        kl_pi_star_g: Some(kl_star),
    };

    let mut summary = serde_json::Map::new();
    for (i, &eps) in cfg.eps_list.iter().enumerate() {
        let mut solve_rng = rng::stream(cfg.seed, domain::PERTURB_MU, i as u64);
        let trace = run_aipf(&mu, &nu, &cost, eps, cfg.n_iters, &mut solve_rng)?;
        let diag = diagnose_trace(&trace, eps, &opts)?;
        fs::write(out_dir.join(format!("trace_{i}_eps_{eps}.csv")), trace.to_csv())?;
        summary.insert(
            format!("{eps}"),
            json!({
                "rate_a": diag.rate_a,
                "rate_b": diag.rate_b,
                "monotonicity_violations": diag.monotonicity_violations,
                "bound_satisfied": diag.bound_satisfied,
            }),
        );
        println!(
            "eps {eps}: A {:.6e}, B {:.6e}, violations {}, bound {}",
            diag.rate_a,
            diag.rate_b,
            diag.monotonicity_violations,
            if diag.bound_satisfied { "ok" } else { "exceeded" }
        );
    }
    let mut body = serde_json::to_string_pretty(&serde_json::Value::Object(summary))?;
    body.push('\n');
    fs::write(out_dir.join("summary.json"), body)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_eps_list_fails_validation() {
        let args = SinkhornArgs {
            eps_list: Some(vec![]),
            ..Default::default()
        };
        let err = resolve(&args).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("eps_list"));
    }

    #[test]
    fn duplicate_and_negative_eps_are_rejected() {
        let args = SinkhornArgs {
            eps_list: Some(vec![1e-3, 1e-3]),
            ..Default::default()
        };
        assert!(resolve(&args).unwrap_err().to_string().contains("duplicate"));
        let args = SinkhornArgs {
            eps_list: Some(vec![-1e-3]),
            ..Default::default()
        };
        assert!(resolve(&args).unwrap_err().to_string().contains("nonnegative"));
    }

    #[test]
    fn defaults_hold_until_overridden() {
        let cfg = resolve(&SinkhornArgs::default()).unwrap();
        assert_eq!(cfg.grid_size, 16);
        assert_eq!(cfg.reg_eps, 0.5);
        assert_eq!(cfg.n_iters, 200);
        let cfg = resolve(&SinkhornArgs {
            grid_size: Some(8),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(cfg.grid_size, 8);
    }
}
