//! Shared fixtures for the criterion benchmarks.

use rand_chacha::ChaCha8Rng;
use sbkit_core::csbi::{ImputeConfig, PolicyPair, TrainConfig};
use sbkit_core::data::{generate, make_masks, SignalConfig, TargetStrategy};
use sbkit_core::{Dataset, MaskSet, SdeSpec};

/// Deterministic RNG for fixture construction.
pub fn rng(seed: u64) -> ChaCha8Rng {
    sbkit_core::rng::stream(seed, sbkit_core::rng::domain::DATA, 0)
}

/// Small dataset matching the desk imputation setting at reduced size.
pub fn bench_dataset() -> Dataset {
    let cfg = SignalConfig {
        n_features: 2,
        n_times: 20,
        noise_sigma: 0.1,
        n_samples: 8,
        drop_ratio: 0.1,
        strategy: TargetStrategy::ConsecutiveBlock { len: 5 },
    };
    generate(&cfg, 7).expect("bench dataset")
}

/// Untrained policy pair plus the settings needed to run inference on it.
pub fn bench_policy() -> (PolicyPair, TrainConfig) {
    let sde = SdeSpec::ve(0.05, 2.5, 20).expect("sde spec");
    let mut cfg = TrainConfig::desk(sde, 0);
    cfg.hidden_widths = vec![32, 32];
    let pair = PolicyPair::init(&cfg, 2, 20).expect("policy init");
    (pair, cfg)
}

/// Conditioning input and masks for one window of the bench dataset.
pub fn bench_condition(ds: &Dataset) -> (Vec<f64>, MaskSet) {
    let w = &ds.windows[0];
    let x_cond: Vec<f64> = w
        .values()
        .iter()
        .zip(w.masks().cond())
        .map(|(&v, &c)| if c == 1 { v } else { 0.0 })
        .collect();
    (x_cond, w.masks().clone())
}

/// Inference settings shared by the impute benchmarks.
pub fn bench_impute_config(sde: SdeSpec) -> ImputeConfig {
    ImputeConfig::new(sde, 0)
}

/// Fresh random mask set on the bench grid.
pub fn bench_masks(seed: u64) -> MaskSet {
    let obs = vec![1u8; 2 * 20];
    make_masks(
        2,
        20,
        obs,
        TargetStrategy::ConsecutiveBlock { len: 5 },
        &mut rng(seed),
    )
    .expect("masks")
}
