//! On-disk artifact formats shared by the subcommands: the resolved-config
//! echo, the version stamp, network checkpoints, and imputation sample
//! tensors.
//!
//! Every command writes `config.json` (the fully resolved configuration it
//! ran with) and `version.txt` into its output directory, so a run can be
//! reproduced bitwise from its own artifacts.

use crate::fail::Failure;
use sbkit_core::csbi::PolicyPair;
use sbkit_core::neural::{EmbeddingSpec, MlpParams};
use sbkit_core::sde::SdeSpec;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Code version stamped into every output directory.
pub const VERSION_STRING: &str = concat!("sbkit ", env!("CARGO_PKG_VERSION"));

/// Parse a JSON config file into `T`. Missing files are I/O failures; files
/// that exist but do not parse are validation failures.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::io(format!("config {}: {}", path.display(), e)))?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::validation(format!("config {}: {}", path.display(), e)))
}

/// Create the output directory and write the resolved config plus the
/// version stamp into it.
pub fn write_run_manifest<T: Serialize>(out_dir: &Path, config: &T) -> Result<(), Failure> {
    fs::create_dir_all(out_dir)
        .map_err(|e| Failure::io(format!("create {}: {}", out_dir.display(), e)))?;
    let mut body = serde_json::to_string_pretty(config)?;
    body.push('\n');
    fs::write(out_dir.join("config.json"), body)?;
    fs::write(out_dir.join("version.txt"), format!("{VERSION_STRING}\n"))?;
    Ok(())
}

/// Flat network parameters with their layer widths, the serialized form of
/// [`MlpParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpData {
    pub widths: Vec<usize>,
    pub data: Vec<f64>,
}

impl MlpData {
    pub fn from_params(p: &MlpParams) -> Self {
        Self {
            widths: p.widths().to_vec(),
            data: p.data().to_vec(),
        }
    }

    pub fn to_params(&self) -> Result<MlpParams, Failure> {
        MlpParams::from_data(&self.widths, self.data.clone())
            .map_err(|e| Failure::validation(format!("checkpoint parameters: {e}")))
    }
}

/// A trained policy pair with everything inference needs: both networks, the
/// embedding layout, the window shape, and the noising schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub n_features: usize,
    pub n_times: usize,
    pub embedding: EmbeddingSpec,
    pub sde: SdeSpec,
    pub forward: MlpData,
    pub backward: MlpData,
}

impl Checkpoint {
    pub fn from_pair(pair: &PolicyPair, sde: &SdeSpec) -> Self {
        Self {
            version: 1,
            n_features: pair.n_features,
            n_times: pair.n_times,
            embedding: pair.embedding,
            sde: sde.clone(),
            forward: MlpData::from_params(&pair.forward),
            backward: MlpData::from_params(&pair.backward),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), Failure> {
        let mut body = serde_json::to_string(self)?;
        body.push('\n');
        fs::write(path, body)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::io(format!("checkpoint {}: {}", path.display(), e)))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Failure::validation(format!("checkpoint {}: {}", path.display(), e)))?;
        if ckpt.version != 1 {
            return Err(Failure::validation(format!(
                "checkpoint {}: unsupported version {}",
                path.display(),
                ckpt.version
            )));
        }
        Ok(ckpt)
    }
}

/// First line of a sample tensor file: ensemble shape plus the conditioning
/// and target masks of every imputed window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub version: u32,
    pub n_samples: usize,
    pub n_features: usize,
    pub n_times: usize,
    pub windows: Vec<WindowMasks>,
}

/// Masks one window was imputed under; `index` points into the dataset the
/// samples were drawn for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowMasks {
    pub index: usize,
    pub cond: Vec<u8>,
    pub target: Vec<u8>,
}

/// One imputed grid, flattened feature-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleLine {
    pub window: usize,
    pub sample: usize,
    pub values: Vec<f64>,
}

/// In-memory form of a sample tensor file: `samples[w][s]` is sample `s` of
/// the `w`-th imputed window (in header order).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTensor {
    pub header: TensorHeader,
    pub samples: Vec<Vec<Vec<f64>>>,
}

/// Write a sample tensor as JSON lines: the header, then one line per
/// (window, sample) pair in window-major order.
pub fn save_samples(path: &Path, tensor: &SampleTensor) -> Result<(), Failure> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    let mut line = serde_json::to_string(&tensor.header)?;
    line.push('\n');
    out.write_all(line.as_bytes())?;
    for (w, ensemble) in tensor.samples.iter().enumerate() {
        let window = tensor.header.windows[w].index;
        for (s, values) in ensemble.iter().enumerate() {
            let mut line = serde_json::to_string(&SampleLine {
                window,
                sample: s,
                values: values.clone(),
            })?;
            line.push('\n');
            out.write_all(line.as_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Read a sample tensor written by [`save_samples`], checking that every
/// declared (window, sample) pair is present exactly once with the declared
/// grid size.
pub fn load_samples(path: &Path) -> Result<SampleTensor, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::io(format!("samples {}: {}", path.display(), e)))?;
    let mut lines = text.lines().enumerate();
    let (_, first) = lines
        .next()
        .ok_or_else(|| Failure::validation(format!("samples {}: empty file", path.display())))?;
    let header: TensorHeader = serde_json::from_str(first)
        .map_err(|e| Failure::validation(format!("samples {} line 1: {}", path.display(), e)))?;
    if header.version != 1 {
        return Err(Failure::validation(format!(
            "samples {}: unsupported version {}",
            path.display(),
            header.version
        )));
    }
    let n_entries = header.n_features * header.n_times;
    for w in &header.windows {
        if w.cond.len() != n_entries || w.target.len() != n_entries {
            return Err(Failure::validation(format!(
                "samples {}: window {} masks do not match the {}x{} grid",
                path.display(),
                w.index,
                header.n_features,
                header.n_times
            )));
        }
    }
    let slot = |window: usize| -> Option<usize> {
        header.windows.iter().position(|w| w.index == window)
    };
    let mut samples: Vec<Vec<Option<Vec<f64>>>> =
        vec![vec![None; header.n_samples]; header.windows.len()];
    for (i, line) in lines {
        let parsed: SampleLine = serde_json::from_str(line).map_err(|e| {
            Failure::validation(format!("samples {} line {}: {}", path.display(), i + 1, e))
        })?;
        let w = slot(parsed.window).ok_or_else(|| {
            Failure::validation(format!(
                "samples {} line {}: window {} is not declared in the header",
                path.display(),
                i + 1,
                parsed.window
            ))
        })?;
        if parsed.sample >= header.n_samples {
            return Err(Failure::validation(format!(
                "samples {} line {}: sample index {} outside 0..{}",
                path.display(),
                i + 1,
                parsed.sample,
                header.n_samples
            )));
        }
        if parsed.values.len() != n_entries {
            return Err(Failure::validation(format!(
                "samples {} line {}: {} values for a {}-entry grid",
                path.display(),
                i + 1,
                parsed.values.len(),
                n_entries
            )));
        }
        if samples[w][parsed.sample].is_some() {
            return Err(Failure::validation(format!(
                "samples {} line {}: duplicate record for window {} sample {}",
                path.display(),
                i + 1,
                parsed.window,
                parsed.sample
            )));
        }
        samples[w][parsed.sample] = Some(parsed.values);
    }
    let mut out = Vec::with_capacity(samples.len());
    for (w, ensemble) in samples.into_iter().enumerate() {
        let mut rows = Vec::with_capacity(ensemble.len());
        for (s, row) in ensemble.into_iter().enumerate() {
            rows.push(row.ok_or_else(|| {
                Failure::validation(format!(
                    "samples {}: missing record for window {} sample {}",
                    path.display(),
                    header.windows[w].index,
                    s
                ))
            })?);
        }
        out.push(rows);
    }
    Ok(SampleTensor {
        header,
        samples: out,
    })
}
