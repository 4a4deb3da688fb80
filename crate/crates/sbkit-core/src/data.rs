//! Synthetic multivariate sinusoid windows with observation, condition, and
//! target masks, plus JSON-lines dataset serialization and CSV export.
//!
//! Each sample is a `K x L` grid: eight closed-form signals evaluated on a
//! uniform time grid over `[0, 1]` with one shared random phase per sample,
//! Gaussian observation noise, randomly dropped (unknown) entries, and a
//! condition/target split driven by a configurable strategy. Unobserved
//! values carry a sentinel of exactly `0.0` and must never be read as data.

use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, domain};

/// Errors for generation, mask construction, and dataset IO.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("signal index {0} out of range 1..=8")]
    SignalIndex(usize),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// How target entries are carved out of the observed set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetStrategy {
    /// One random contiguous run of `len` time points per feature.
    ConsecutiveBlock { len: usize },
    /// Each observed entry becomes a target independently with probability
    /// `ratio`.
    RandomRatio { ratio: f64 },
    /// Everything at time index `context_len` or later is a target;
    /// earlier observations condition.
    Forecast { context_len: usize },
}

/// Generation settings for one dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalConfig {
    /// Number of features `K`, between 1 and 8.
    pub n_features: usize,
    /// Number of time points `L`, at least 2.
    pub n_times: usize,
    /// Standard deviation of the additive Gaussian observation noise.
    pub noise_sigma: f64,
    /// Number of windows to generate.
    pub n_samples: usize,
    /// Probability that an entry is unknown (never observed).
    pub drop_ratio: f64,
    /// Condition/target split strategy.
    pub strategy: TargetStrategy,
}

impl SignalConfig {
    /// Check all field invariants.
    pub fn validate(&self) -> Result<(), DataError> {
        if !(1..=8).contains(&self.n_features) {
            return Err(DataError::InvalidConfig(format!(
                "n_features must be in 1..=8, got {}",
                self.n_features
            )));
        }
        if self.n_times < 2 {
            return Err(DataError::InvalidConfig(format!(
                "n_times must be at least 2, got {}",
                self.n_times
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(DataError::InvalidConfig(format!(
                "noise_sigma must be finite and nonnegative, got {}",
                self.noise_sigma
            )));
        }
        if self.n_samples == 0 {
            return Err(DataError::InvalidConfig("n_samples must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.drop_ratio) {
            return Err(DataError::InvalidConfig(format!(
                "drop_ratio must be in [0, 1), got {}",
                self.drop_ratio
            )));
        }
        match self.strategy {
            TargetStrategy::ConsecutiveBlock { len } => {
                if len > self.n_times {
                    return Err(DataError::InvalidConfig(format!(
                        "block length {} exceeds n_times {}",
                        len, self.n_times
                    )));
                }
            }
            TargetStrategy::RandomRatio { ratio } => {
                if !(0.0..1.0).contains(&ratio) {
                    return Err(DataError::InvalidConfig(format!(
                        "target ratio must be in [0, 1), got {}",
                        ratio
                    )));
                }
            }
            TargetStrategy::Forecast { context_len } => {
                if context_len > self.n_times {
                    return Err(DataError::InvalidConfig(format!(
                        "context length {} exceeds n_times {}",
                        context_len, self.n_times
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Observation/condition/target masks over a `K x L` grid, stored row-major
/// per feature. Construction enforces the three mask identities:
/// conditions and targets are disjoint, and both are observed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSet {
    n_features: usize,
    n_times: usize,
    obs: Vec<u8>,
    cond: Vec<u8>,
    target: Vec<u8>,
}

impl MaskSet {
    /// Build and validate a mask set.
    pub fn new(
        n_features: usize,
        n_times: usize,
        obs: Vec<u8>,
        cond: Vec<u8>,
        target: Vec<u8>,
    ) -> Result<Self, DataError> {
        let n = n_features * n_times;
        if obs.len() != n || cond.len() != n || target.len() != n {
            return Err(DataError::InvalidWindow(format!(
                "mask lengths ({}, {}, {}) do not match grid size {}",
                obs.len(),
                cond.len(),
                target.len(),
                n
            )));
        }
        for (name, grid) in [("obs", &obs), ("cond", &cond), ("target", &target)] {
            if grid.iter().any(|&b| b > 1) {
                return Err(DataError::InvalidWindow(format!(
                    "mask {} contains non-binary entries",
                    name
                )));
            }
        }
        for i in 0..n {
            if cond[i] & target[i] != 0 {
                return Err(DataError::InvalidWindow(format!(
                    "entry {} is both condition and target",
                    i
                )));
            }
            if cond[i] & !obs[i] & 1 != 0 {
                return Err(DataError::InvalidWindow(format!(
                    "entry {} conditions on an unobserved value",
                    i
                )));
            }
            if target[i] & !obs[i] & 1 != 0 {
                return Err(DataError::InvalidWindow(format!(
                    "entry {} targets an unobserved value",
                    i
                )));
            }
        }
        Ok(Self {
            n_features,
            n_times,
            obs,
            cond,
            target,
        })
    }

    /// Feature count `K`.
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Time count `L`.
    pub fn n_times(&self) -> usize {
        self.n_times
    }

    /// Observation mask, row-major.
    pub fn obs(&self) -> &[u8] {
        &self.obs
    }

    /// Condition mask, row-major.
    pub fn cond(&self) -> &[u8] {
        &self.cond
    }

    /// Target mask, row-major.
    pub fn target(&self) -> &[u8] {
        &self.target
    }

    /// Number of target entries.
    pub fn n_target(&self) -> usize {
        self.target.iter().map(|&b| b as usize).sum()
    }

    /// Number of condition entries.
    pub fn n_cond(&self) -> usize {
        self.cond.iter().map(|&b| b as usize).sum()
    }

    /// Number of observed entries.
    pub fn n_obs(&self) -> usize {
        self.obs.iter().map(|&b| b as usize).sum()
    }
}

/// One sample: a value grid plus its masks and the phase it was generated
/// with. Values outside the observation mask are exactly `0.0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesWindow {
    values: Vec<f64>,
    masks: MaskSet,
    phase: f64,
}

impl TimeSeriesWindow {
    /// Build a window, enforcing finite values and the zero sentinel outside
    /// the observation mask.
    pub fn new(values: Vec<f64>, masks: MaskSet, phase: f64) -> Result<Self, DataError> {
        if values.len() != masks.n_features * masks.n_times {
            return Err(DataError::InvalidWindow(format!(
                "value length {} does not match grid size {}",
                values.len(),
                masks.n_features * masks.n_times
            )));
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(DataError::InvalidWindow(format!(
                    "non-finite value at entry {}",
                    i
                )));
            }
            if masks.obs[i] == 0 && v != 0.0 {
                return Err(DataError::InvalidWindow(format!(
                    "unobserved entry {} must carry the 0 sentinel, got {}",
                    i, v
                )));
            }
        }
        Ok(Self {
            values,
            masks,
            phase,
        })
    }

    /// Row-major `K x L` values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Masks of this window.
    pub fn masks(&self) -> &MaskSet {
        &self.masks
    }

    /// Shared phase shift of this sample.
    pub fn phase(&self) -> f64 {
        self.phase
    }

    /// Value at feature `k`, time `j`.
    pub fn value_at(&self, k: usize, j: usize) -> f64 {
        self.values[k * self.masks.n_times + j]
    }
}

/// A generated dataset with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Seed the windows were generated from.
    pub seed: u64,
    /// Generation settings.
    pub config: SignalConfig,
    /// Generated windows, in sample order.
    pub windows: Vec<TimeSeriesWindow>,
}

/// Closed-form signal `k` for `k` in `1..=8`.
pub fn signal(k: usize, t: f64) -> Result<f64, DataError> {
    let w = 2.0 * std::f64::consts::PI * t;
    let value = match k {
        1 => w.sin(),
        2 => w.cos(),
        3 => w.sin().powi(2),
        4 => 2.0 * w.sin().powi(2) * w.cos(),
        5 => w.sin().powi(2) * w.cos() + 0.3 * t,
        6 => w.sin().powi(3) - 0.3 * t,
        7 => w.cos().powi(2) * (-0.1 * t).exp() - 0.2 * t,
        8 => w.cos().powi(2) * w.sin() * (0.4 * t).exp() + 0.2 * t,
        _ => return Err(DataError::SignalIndex(k)),
    };
    Ok(value)
}

/// Uniform time grid over `[0, 1]` with `n_times` points, endpoints
/// included.
pub fn time_grid(n_times: usize) -> Vec<f64> {
    (0..n_times)
        .map(|j| j as f64 / (n_times - 1) as f64)
        .collect()
}

/// Split observed entries into conditions and targets. The strategy decides
/// the target set; conditions are always the remaining observed entries.
pub fn make_masks(
    n_features: usize,
    n_times: usize,
    obs: Vec<u8>,
    strategy: TargetStrategy,
    rng: &mut ChaCha8Rng,
) -> Result<MaskSet, DataError> {
    let n = n_features * n_times;
    if obs.len() != n {
        return Err(DataError::InvalidWindow(format!(
            "observation mask length {} does not match grid size {}",
            obs.len(),
            n
        )));
    }
    let mut target = vec![0u8; n];
    match strategy {
        TargetStrategy::ConsecutiveBlock { len } => {
            if len > n_times {
                return Err(DataError::InvalidConfig(format!(
                    "block length {} exceeds n_times {}",
                    len, n_times
                )));
            }
            if len > 0 {
                for k in 0..n_features {
                    let start = rng.gen_range(0..=n_times - len);
                    for j in start..start + len {
                        let i = k * n_times + j;
                        target[i] = obs[i];
                    }
                }
            }
        }
        TargetStrategy::RandomRatio { ratio } => {
            if !(0.0..1.0).contains(&ratio) {
                return Err(DataError::InvalidConfig(format!(
                    "target ratio must be in [0, 1), got {}",
                    ratio
                )));
            }
            for i in 0..n {
                let draw = rng.gen::<f64>();
                if draw < ratio {
                    target[i] = obs[i];
                }
            }
        }
        TargetStrategy::Forecast { context_len } => {
            if context_len > n_times {
                return Err(DataError::InvalidConfig(format!(
                    "context length {} exceeds n_times {}",
                    context_len, n_times
                )));
            }
            for k in 0..n_features {
                for j in context_len..n_times {
                    let i = k * n_times + j;
                    target[i] = obs[i];
                }
            }
        }
    }
    let cond: Vec<u8> = obs
        .iter()
        .zip(&target)
        .map(|(&o, &t)| o & !t & 1)
        .collect();
    MaskSet::new(n_features, n_times, obs, cond, target)
}

/// Generate one window from its dedicated random stream. Draw order within
/// the stream: phase, then the `K x L` noise grid, then the `K x L` drop
/// decisions, then the strategy draws.
fn generate_one(cfg: &SignalConfig, seed: u64, sample_index: u64) -> Result<TimeSeriesWindow, DataError> {
    let mut rng = rng::stream(seed, domain::DATA, sample_index);
    let grid = time_grid(cfg.n_times);
    let phase: f64 = rng.gen::<f64>();
    let n = cfg.n_features * cfg.n_times;
    let mut values = Vec::with_capacity(n);
    for k in 0..cfg.n_features {
        for &t in &grid {
            let eps: f64 = StandardNormal.sample(&mut rng);
            values.push(signal(k + 1, t + phase)? + cfg.noise_sigma * eps);
        }
    }
    let obs: Vec<u8> = (0..n)
        .map(|_| if rng.gen::<f64>() < cfg.drop_ratio { 0 } else { 1 })
        .collect();
    let masks = make_masks(cfg.n_features, cfg.n_times, obs, cfg.strategy, &mut rng)?;
    for (v, &o) in values.iter_mut().zip(masks.obs()) {
        if o == 0 {
            *v = 0.0;
        }
    }
    TimeSeriesWindow::new(values, masks, phase)
}

/// Generate `cfg.n_samples` windows starting at sample index
/// `first_sample_index`. Each sample uses its own counter-keyed stream, so
/// disjoint index ranges (such as train and validation splits) never share
/// randomness and results do not depend on scheduling.
pub fn generate_with_offset(
    cfg: &SignalConfig,
    seed: u64,
    first_sample_index: u64,
) -> Result<Dataset, DataError> {
    cfg.validate()?;
    let windows: Result<Vec<_>, DataError> = (0..cfg.n_samples as u64)
        .into_par_iter()
        .map(|i| generate_one(cfg, seed, first_sample_index + i))
        .collect();
    Ok(Dataset {
        seed,
        config: *cfg,
        windows: windows?,
    })
}

/// Generate `cfg.n_samples` windows at sample indices `0..n_samples`.
pub fn generate(cfg: &SignalConfig, seed: u64) -> Result<Dataset, DataError> {
    generate_with_offset(cfg, seed, 0)
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    version: u32,
    n_features: usize,
    n_times: usize,
    seed: u64,
    config: SignalConfig,
}

#[derive(Serialize, Deserialize)]
struct WindowLine {
    phase: f64,
    values: Vec<Vec<f64>>,
    obs: Vec<Vec<u8>>,
    cond: Vec<Vec<u8>>,
    target: Vec<Vec<u8>>,
}

fn to_rows<T: Copy>(flat: &[T], n_times: usize) -> Vec<Vec<T>> {
    flat.chunks(n_times).map(|c| c.to_vec()).collect()
}

fn from_rows<T: Copy>(rows: &[Vec<T>]) -> Vec<T> {
    rows.iter().flatten().copied().collect()
}

/// Write a dataset as JSON lines: one header line, then one line per window.
pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<(), DataError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    let header = HeaderLine {
        version: 1,
        n_features: ds.config.n_features,
        n_times: ds.config.n_times,
        seed: ds.seed,
        config: ds.config,
    };
    writeln!(
        out,
        "{}",
        serde_json::to_string(&header).map_err(|e| DataError::Parse {
            line: 1,
            msg: e.to_string()
        })?
    )?;
    for w in &ds.windows {
        let line = WindowLine {
            phase: w.phase,
            values: to_rows(&w.values, ds.config.n_times),
            obs: to_rows(w.masks.obs(), ds.config.n_times),
            cond: to_rows(w.masks.cond(), ds.config.n_times),
            target: to_rows(w.masks.target(), ds.config.n_times),
        };
        writeln!(
            out,
            "{}",
            serde_json::to_string(&line).map_err(|e| DataError::Parse {
                line: 0,
                msg: e.to_string()
            })?
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Read a dataset written by [`save_dataset`]. Any malformed line aborts the
/// load with its line number; no partial dataset is returned.
pub fn load_dataset(path: &Path) -> Result<Dataset, DataError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header_text) = lines.next().ok_or(DataError::Parse {
        line: 1,
        msg: "empty file".to_string(),
    })?;
    let header: HeaderLine = serde_json::from_str(header_text).map_err(|e| DataError::Parse {
        line: 1,
        msg: e.to_string(),
    })?;
    if header.version != 1 {
        return Err(DataError::Parse {
            line: 1,
            msg: format!("unsupported version {}", header.version),
        });
    }
    if header.n_features != header.config.n_features || header.n_times != header.config.n_times {
        return Err(DataError::Parse {
            line: 1,
            msg: "header dimensions disagree with embedded config".to_string(),
        });
    }
    let mut windows = Vec::new();
    for (idx, line_text) in lines {
        if line_text.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let line: WindowLine = serde_json::from_str(line_text).map_err(|e| DataError::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        let shape_ok = |rows: &Vec<Vec<u8>>| {
            rows.len() == header.n_features && rows.iter().all(|r| r.len() == header.n_times)
        };
        if line.values.len() != header.n_features
            || line.values.iter().any(|r| r.len() != header.n_times)
            || !shape_ok(&line.obs)
            || !shape_ok(&line.cond)
            || !shape_ok(&line.target)
        {
            return Err(DataError::Parse {
                line: line_no,
                msg: "window shape disagrees with header".to_string(),
            });
        }
        let masks = MaskSet::new(
            header.n_features,
            header.n_times,
            from_rows(&line.obs),
            from_rows(&line.cond),
            from_rows(&line.target),
        )
        .map_err(|e| DataError::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        let window = TimeSeriesWindow::new(from_rows(&line.values), masks, line.phase).map_err(
            |e| DataError::Parse {
                line: line_no,
                msg: e.to_string(),
            },
        )?;
        windows.push(window);
    }
    Ok(Dataset {
        seed: header.seed,
        config: header.config,
        windows,
    })
}

/// CSV rendering of one window: header plus one `feature,time,value,obs,
/// cond,target` row per grid entry, feature-major, zero-based indices.
pub fn window_to_csv(w: &TimeSeriesWindow) -> String {
    let mut out = String::from("feature,time,value,obs,cond,target\n");
    let (kk, ll) = (w.masks.n_features, w.masks.n_times);
    for k in 0..kk {
        for j in 0..ll {
            let i = k * ll + j;
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                k, j, w.values[i], w.masks.obs[i], w.masks.cond[i], w.masks.target[i]
            ));
        }
    }
    out
}
