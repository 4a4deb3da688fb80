//! Deterministic embedding blocks appended to the flattened window input:
//! sinusoidal diffusion-time features over a geometric frequency ladder plus
//! fixed channels that summarize the feature/time grid shape.

use serde::{Deserialize, Serialize};

/// Widths of the three embedding blocks.
///
/// The network input for a `K x L` window is the concatenation of `K*L`
/// values, `K*L` mask entries, and the three blocks described here, in that
/// order: diffusion-time sinusoids, feature-index channels, time-index
/// channels. Any width may be zero, which drops that block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    /// Width of the diffusion-time sinusoid block.
    pub diffusion_width: usize,
    /// Width of the feature-index channel block.
    pub feature_width: usize,
    /// Width of the time-index channel block.
    pub time_width: usize,
}

impl EmbeddingSpec {
    /// Combined width of all three blocks.
    pub fn total_width(&self) -> usize {
        self.diffusion_width + self.feature_width + self.time_width
    }

    /// Input width of a conditional network over a `K x L` window:
    /// values + masks + embeddings.
    pub fn input_width(&self, n_features: usize, n_times: usize) -> usize {
        2 * n_features * n_times + self.total_width()
    }
}

/// Sinusoid block for a scalar `value`: the first `ceil(width/2)` channels
/// are `sin(value * w_r)`, the rest `cos(value * w_r)`, with `w_r` a
/// geometric ladder from `omega_min` to `omega_max`.
fn sinusoid_block(value: f64, width: usize, omega_min: f64, omega_max: f64, out: &mut Vec<f64>) {
    if width == 0 {
        return;
    }
    let n_sin = width - width / 2;
    let n_cos = width / 2;
    let n_freq = n_sin.max(n_cos);
    let freq = |r: usize| -> f64 {
        if n_freq <= 1 {
            omega_min
        } else {
            omega_min * (omega_max / omega_min).powf(r as f64 / (n_freq - 1) as f64)
        }
    };
    for r in 0..n_sin {
        out.push((value * freq(r)).sin());
    }
    for r in 0..n_cos {
        out.push((value * freq(r)).cos());
    }
}

/// Index channels for a grid axis with `count` positions: the mean over
/// positions of a low-frequency sinusoid ladder, projecting the full set of
/// index indicators to a fixed width regardless of `count`.
fn index_block(count: usize, width: usize, out: &mut Vec<f64>) {
    if width == 0 {
        return;
    }
    if count == 0 {
        out.extend(std::iter::repeat(0.0).take(width));
        return;
    }
    let start = out.len();
    out.extend(std::iter::repeat(0.0).take(width));
    let mut single = Vec::with_capacity(width);
    for i in 0..count {
        single.clear();
        sinusoid_block(i as f64, width, 0.02, 2.0, &mut single);
        for (slot, v) in out[start..].iter_mut().zip(&single) {
            *slot += v / count as f64;
        }
    }
}

/// Embedding for diffusion time `t` (expected in `[0, 1]`) on a grid with
/// `n_features` features and `n_times` time points. Deterministic in all
/// arguments; an all-zero spec yields an empty block.
pub fn embed(spec: &EmbeddingSpec, t: f64, n_features: usize, n_times: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(spec.total_width());
    sinusoid_block(t, spec.diffusion_width, std::f64::consts::PI, 500.0 * std::f64::consts::PI, &mut out);
    index_block(n_features, spec.feature_width, &mut out);
    index_block(n_times, spec.time_width, &mut out);
    out
}
