//! Checkpoint IO: the flat parameter vector as little-endian f64 binary in
//! `<base>.bin`, with a JSON sidecar `<base>.json` holding layer widths, the
//! embedding spec, the training step, and the run seed.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::embed::EmbeddingSpec;
use super::mlp::MlpParams;
use super::NeuralError;

/// Sidecar metadata stored next to the binary parameter dump.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Layer widths of the serialized network, input first.
    pub layer_widths: Vec<usize>,
    /// Embedding spec the network was trained with.
    pub embedding: EmbeddingSpec,
    /// Optimizer step count at save time.
    pub step: u64,
    /// Seed of the run that produced the checkpoint.
    pub seed: u64,
}

fn paths(base: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    (base.with_extension("bin"), base.with_extension("json"))
}

/// Write `<base>.bin` and `<base>.json`. The metadata widths must match the
/// network being saved.
pub fn save_checkpoint(
    base: &Path,
    params: &MlpParams,
    meta: &CheckpointMeta,
) -> Result<(), NeuralError> {
    if meta.layer_widths != params.widths() {
        return Err(NeuralError::Checkpoint(format!(
            "metadata widths {:?} do not match network widths {:?}",
            meta.layer_widths,
            params.widths()
        )));
    }
    let (bin_path, json_path) = paths(base);
    let mut bytes = Vec::with_capacity(params.n_params() * 8);
    for v in params.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&bin_path, bytes)?;
    fs::write(&json_path, serde_json::to_vec_pretty(meta)?)?;
    Ok(())
}

/// Read a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(base: &Path) -> Result<(MlpParams, CheckpointMeta), NeuralError> {
    let (bin_path, json_path) = paths(base);
    let meta: CheckpointMeta = serde_json::from_slice(&fs::read(&json_path)?)?;
    let bytes = fs::read(&bin_path)?;
    if bytes.len() % 8 != 0 {
        return Err(NeuralError::Checkpoint(format!(
            "binary payload of {} bytes is not a whole number of f64 values",
            bytes.len()
        )));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let expected = MlpParams::n_params_for(&meta.layer_widths);
    if data.len() != expected {
        return Err(NeuralError::Checkpoint(format!(
            "widths {:?} need {} parameters, binary holds {}",
            meta.layer_widths,
            expected,
            data.len()
        )));
    }
    let params = MlpParams::from_data(&meta.layer_widths, data)?;
    Ok((params, meta))
}
