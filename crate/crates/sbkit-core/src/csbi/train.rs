//! Score-matching warmup and the alternating likelihood training loop.
//!
//! Training proceeds in three layers: `dsm_warmup` fits the backward network
//! by denoising regression against the closed-form transition kernel;
//! `train` runs warmup followed by alternating stages that refresh a
//! trajectory cache under the frozen counterpart policy and descend the
//! likelihood brackets; `train_score_only` is a standalone code path that
//! never constructs a forward policy and stops after warmup, giving the
//! score-matching-only baseline.
//!
//! All randomness is drawn from counter-keyed streams of the config seed, so
//! runs are reproducible bit for bit regardless of thread count.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{
    backward_field, backward_input, backward_loss, embed_at, forward_field, forward_loss,
    CachedPath, CsbiError, Direction, LogEntry, PolicyPair, TrainConfig, TrajectoryCache,
    VAR_FLOOR,
};
use crate::data::{make_masks, Dataset};
use crate::neural::{
    adamw_step, mlp_forward, mlp_grad, AdamwConfig, EmbeddingSpec, MlpParams, NeuralError,
    OptimizerState,
};

fn step_or_divergence(
    net: &mut MlpParams,
    grads: &[f64],
    opt: &mut OptimizerState,
    stage: usize,
    iter: usize,
    direction: Direction,
) -> Result<(), CsbiError> {
    adamw_step(net, grads, opt).map_err(|e| match e {
        NeuralError::NonFiniteGradient { .. } => CsbiError::Divergence {
            stage,
            iter,
            direction,
        },
        other => CsbiError::Neural(other),
    })
}
use crate::rng::{self, domain};
use crate::sde::{em_backward_ensemble, em_forward_ensemble, transition_kernel};

fn check_dataset(cfg: &TrainConfig, dataset: &Dataset) -> Result<(usize, usize), CsbiError> {
    cfg.validate()?;
    if dataset.windows.is_empty() {
        return Err(CsbiError::EmptyDataset);
    }
    let k = dataset.config.n_features;
    let l = dataset.config.n_times;
    for w in &dataset.windows {
        if w.values().len() != k * l {
            return Err(CsbiError::ShapeMismatch(format!(
                "window has {} values, dataset config says {}",
                w.values().len(),
                k * l
            )));
        }
    }
    Ok((k, l))
}

struct WarmupItem {
    x_t: Vec<f64>,
    x_cond: Vec<f64>,
    m_cond: Vec<u8>,
    m_target: Vec<u8>,
    xi: Vec<f64>,
    sqrt_var: f64,
    t: f64,
}

/// Draw one warmup batch: window choice, mask split, diffusion time, and the
/// kernel perturbation, in a fixed stream order.
fn draw_warmup_batch(
    dataset: &Dataset,
    cfg: &TrainConfig,
    k: usize,
    l: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<WarmupItem>, CsbiError> {
    let d = k * l;
    let dt = cfg.sde.dt();
    let mut items = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.batch_size {
        let window = &dataset.windows[rng.gen_range(0..dataset.windows.len())];
        let masks = if cfg.resample_masks {
            make_masks(
                k,
                l,
                window.masks().obs().to_vec(),
                dataset.config.strategy,
                rng,
            )?
        } else {
            window.masks().clone()
        };
        let step = rng.gen_range(1..=cfg.sde.n_steps);
        let t = step as f64 * dt;
        let kernel = transition_kernel(&cfg.sde, 0.0, t, window.values())?;
        let sqrt_var = kernel.var.max(VAR_FLOOR).sqrt();
        let mut xi = vec![0.0; d];
        let mut x_t = vec![0.0; d];
        for i in 0..d {
            let draw: f64 = StandardNormal.sample(rng);
            xi[i] = draw;
            x_t[i] = kernel.mean[i] + sqrt_var * draw;
        }
        let x_cond: Vec<f64> = window
            .values()
            .iter()
            .zip(masks.cond())
            .map(|(&v, &m)| if m != 0 { v } else { 0.0 })
            .collect();
        items.push(WarmupItem {
            x_t,
            x_cond,
            m_cond: masks.cond().to_vec(),
            m_target: masks.target().to_vec(),
            xi,
            sqrt_var,
            t,
        });
    }
    Ok(items)
}

/// Denoising warmup on a bare backward network; shared by the paired and
/// score-only trainers so the two stay bitwise-identical.
fn warmup_core(
    net: &mut MlpParams,
    opt: &mut OptimizerState,
    embedding: &EmbeddingSpec,
    dataset: &Dataset,
    cfg: &TrainConfig,
    k: usize,
    l: usize,
) -> Result<Vec<LogEntry>, CsbiError> {
    let d = k * l;
    let mut log = Vec::with_capacity(cfg.warmup_iters);
    for iter in 0..cfg.warmup_iters {
        let mut w_rng = rng::stream(cfg.seed, domain::WARMUP, iter as u64);
        let items = draw_warmup_batch(dataset, cfg, k, l, &mut w_rng)?;
        let total_targets: usize = items
            .iter()
            .map(|it| it.m_target.iter().map(|&m| m as usize).sum::<usize>())
            .sum();
        let lr = opt.next_lr();
        if total_targets == 0 {
            log.push(LogEntry::Iteration {
                stage: 0,
                iter,
                direction: Direction::Warmup,
                loss: 0.0,
                lr,
            });
            continue;
        }
        let scale = 1.0 / total_targets as f64;
        let mut loss = 0.0;
        let mut grads = vec![0.0; net.n_params()];
        for it in &items {
            let block = embed_at(embedding, &cfg.sde, it.t, k, l);
            let input = backward_input(&it.x_t, &it.x_cond, &it.m_cond, &block);
            let out = mlp_forward(net, &input)?;
            let mut upstream = vec![0.0; d];
            for i in 0..d {
                if it.m_target[i] != 0 {
                    let residual = out[i] / it.sqrt_var + it.xi[i];
                    loss += residual * residual * scale;
                    upstream[i] = 2.0 * residual * scale / it.sqrt_var;
                }
            }
            let (pg, _) = mlp_grad(net, &input, &upstream)?;
            for (slot, g) in grads.iter_mut().zip(&pg) {
                *slot += g;
            }
        }
        if !loss.is_finite() {
            return Err(CsbiError::Divergence {
                stage: 0,
                iter,
                direction: Direction::Warmup,
            });
        }
        step_or_divergence(net, &grads, opt, 0, iter, Direction::Warmup)?;
        log.push(LogEntry::Iteration {
            stage: 0,
            iter,
            direction: Direction::Warmup,
            loss,
            lr,
        });
    }
    Ok(log)
}

/// Denoising score-matching warmup of the backward policy; the forward
/// policy is neither used nor updated. Returns the warmup log (stage 0).
pub fn dsm_warmup(
    pair: &mut PolicyPair,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<LogEntry>, CsbiError> {
    let (k, l) = check_dataset(cfg, dataset)?;
    if (k, l) != (pair.n_features, pair.n_times) {
        return Err(CsbiError::ShapeMismatch(format!(
            "policy grid {}x{} does not match dataset grid {}x{}",
            pair.n_features, pair.n_times, k, l
        )));
    }
    let embedding = pair.embedding;
    warmup_core(
        &mut pair.backward,
        &mut pair.backward_opt,
        &embedding,
        dataset,
        cfg,
        k,
        l,
    )
}

fn refresh_forward_cache(
    pair: &PolicyPair,
    dataset: &Dataset,
    cfg: &TrainConfig,
    k: usize,
    l: usize,
    cache_counter: &mut u64,
    path_counter: &mut u64,
) -> Result<TrajectoryCache, CsbiError> {
    let mut c_rng = rng::stream(cfg.seed, domain::CACHE, *cache_counter);
    *cache_counter += 1;
    let mut x0s = Vec::with_capacity(cfg.batch_size);
    let mut contexts = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.batch_size {
        let window = &dataset.windows[c_rng.gen_range(0..dataset.windows.len())];
        let masks = if cfg.resample_masks {
            make_masks(
                k,
                l,
                window.masks().obs().to_vec(),
                dataset.config.strategy,
                &mut c_rng,
            )?
        } else {
            window.masks().clone()
        };
        let x_cond: Vec<f64> = window
            .values()
            .iter()
            .zip(masks.cond())
            .map(|(&v, &m)| if m != 0 { v } else { 0.0 })
            .collect();
        x0s.push(window.values().to_vec());
        contexts.push((x_cond, masks.cond().to_vec(), masks.target().to_vec()));
    }
    let streams: Vec<ChaCha8Rng> = (0..cfg.batch_size)
        .map(|_| {
            let s = rng::stream(cfg.seed, domain::PATH, *path_counter);
            *path_counter += 1;
            s
        })
        .collect();
    let policy = |x: &[f64], t: f64| forward_field(&pair.forward, &pair.embedding, &cfg.sde, x, t, k, l);
    let paths = em_forward_ensemble(&cfg.sde, &x0s, Some(&policy), streams)?;
    let items = paths
        .into_iter()
        .zip(contexts)
        .map(|(path, (x_cond, m_cond, m_target))| CachedPath {
            path,
            x_cond,
            m_cond,
            m_target,
        })
        .collect();
    Ok(TrajectoryCache::new(items, cfg.cache_refresh_period))
}

fn refresh_backward_cache(
    pair: &PolicyPair,
    cfg: &TrainConfig,
    k: usize,
    l: usize,
    path_counter: &mut u64,
) -> Result<TrajectoryCache, CsbiError> {
    let d = k * l;
    let zero_vals = vec![0.0; d];
    let zero_mask = vec![0u8; d];
    let mut xts = Vec::with_capacity(cfg.batch_size);
    let mut streams = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.batch_size {
        let mut s = rng::stream(cfg.seed, domain::PATH, *path_counter);
        *path_counter += 1;
        let sd = cfg.sde.prior_std();
        let x_t: Vec<f64> = (0..d)
            .map(|_| {
                let draw: f64 = StandardNormal.sample(&mut s);
                sd * draw
            })
            .collect();
        xts.push(x_t);
        streams.push(s);
    }
    let zv = zero_vals.clone();
    let zm = zero_mask.clone();
    let policy = move |x: &[f64], t: f64| {
        backward_field(&pair.backward, &pair.embedding, &cfg.sde, x, &zv, &zm, t, k, l)
    };
    let paths = em_backward_ensemble(&cfg.sde, &xts, &policy, streams)?;
    let items = paths
        .into_iter()
        .map(|path| CachedPath {
            path,
            x_cond: zero_vals.clone(),
            m_cond: zero_mask.clone(),
            m_target: vec![1u8; d],
        })
        .collect();
    Ok(TrajectoryCache::new(items, cfg.cache_refresh_period))
}

/// Full alternating training loop: warmup, then per stage a backward phase
/// on freshly cached forward trajectories followed by a forward phase on
/// freshly cached backward trajectories. Returns the trained pair and the
/// complete JSON-lines-ready log.
pub fn train(cfg: &TrainConfig, dataset: &Dataset) -> Result<(PolicyPair, Vec<LogEntry>), CsbiError> {
    let (k, l) = check_dataset(cfg, dataset)?;
    let mut pair = PolicyPair::init(cfg, k, l)?;
    let mut log = dsm_warmup(&mut pair, dataset, cfg)?;

    let mut cache_counter = 0u64;
    let mut path_counter = 0u64;
    let mut loss_counter = 0u64;
    for stage in 1..=cfg.n_stages {
        let mut cache: Option<TrajectoryCache> = None;
        for iter in 0..cfg.iters_per_stage {
            if iter % cfg.cache_refresh_period == 0 {
                let fresh = refresh_forward_cache(
                    &pair,
                    dataset,
                    cfg,
                    k,
                    l,
                    &mut cache_counter,
                    &mut path_counter,
                )?;
                log.push(LogEntry::CacheRefresh {
                    stage,
                    iter,
                    direction: Direction::Backward,
                    n_paths: cfg.batch_size,
                });
                cache = Some(fresh);
            }
            let cache_ref = cache.as_mut().expect("cache refreshed on first iteration");
            let mut l_rng = rng::stream(cfg.seed, domain::LOSS, loss_counter);
            loss_counter += 1;
            let out = backward_loss(&pair, cache_ref, cfg, &mut l_rng)?;
            if !out.loss.is_finite() {
                return Err(CsbiError::Divergence {
                    stage,
                    iter,
                    direction: Direction::Backward,
                });
            }
            let lr = pair.backward_opt.next_lr();
            step_or_divergence(
                &mut pair.backward,
                &out.grad,
                &mut pair.backward_opt,
                stage,
                iter,
                Direction::Backward,
            )?;
            log.push(LogEntry::Iteration {
                stage,
                iter,
                direction: Direction::Backward,
                loss: out.loss,
                lr,
            });
            cache_ref.tick();
        }

        let mut cache: Option<TrajectoryCache> = None;
        for iter in 0..cfg.iters_per_stage {
            if iter % cfg.cache_refresh_period == 0 {
                let fresh = refresh_backward_cache(&pair, cfg, k, l, &mut path_counter)?;
                log.push(LogEntry::CacheRefresh {
                    stage,
                    iter,
                    direction: Direction::Forward,
                    n_paths: cfg.batch_size,
                });
                cache = Some(fresh);
            }
            let cache_ref = cache.as_mut().expect("cache refreshed on first iteration");
            let mut l_rng = rng::stream(cfg.seed, domain::LOSS, loss_counter);
            loss_counter += 1;
            let out = forward_loss(&pair, cache_ref, cfg, &mut l_rng)?;
            if !out.loss.is_finite() {
                return Err(CsbiError::Divergence {
                    stage,
                    iter,
                    direction: Direction::Forward,
                });
            }
            let lr = pair.forward_opt.next_lr();
            step_or_divergence(
                &mut pair.forward,
                &out.grad,
                &mut pair.forward_opt,
                stage,
                iter,
                Direction::Forward,
            )?;
            log.push(LogEntry::Iteration {
                stage,
                iter,
                direction: Direction::Forward,
                loss: out.loss,
                lr,
            });
            cache_ref.tick();
        }
    }
    Ok((pair, log))
}

/// Score-matching-only trainer: a dedicated code path that never constructs
/// a forward policy. Runs exactly the warmup of [`train`] (same streams,
/// same updates) and returns the backward network, which plugs directly into
/// [`super::impute`].
pub fn train_score_only(
    cfg: &TrainConfig,
    dataset: &Dataset,
) -> Result<(MlpParams, Vec<LogEntry>), CsbiError> {
    let (k, l) = check_dataset(cfg, dataset)?;
    let d = k * l;
    let emb_w = cfg.embedding.total_width();
    let mut widths = vec![2 * d + emb_w];
    widths.extend_from_slice(&cfg.hidden_widths);
    widths.push(d);
    let mut net_rng = rng::stream(cfg.seed, domain::INIT, 1);
    let mut net = MlpParams::init(&widths, &mut net_rng)?;
    super::zero_output_layer(&mut net);
    let mut opt = OptimizerState::new(
        net.n_params(),
        AdamwConfig {
            lr: cfg.lr_backward,
            lr_decay: cfg.lr_decay,
            ..AdamwConfig::default()
        },
    )?;
    let log = warmup_core(&mut net, &mut opt, &cfg.embedding, dataset, cfg, k, l)?;
    Ok((net, log))
}

#[cfg(test)]
mod tests {
    use super::super::DivergenceMode;
    use super::*;
    use crate::data::{generate, MaskSet, SignalConfig, TargetStrategy, TimeSeriesWindow};
    use crate::sde::SdeSpec;

    fn small_dataset(seed: u64) -> Dataset {
        let config = SignalConfig {
            n_features: 2,
            n_times: 6,
            noise_sigma: 0.05,
            n_samples: 12,
            drop_ratio: 0.1,
            strategy: TargetStrategy::RandomRatio { ratio: 0.5 },
        };
        generate(&config, seed).unwrap()
    }

    fn tiny_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            warmup_iters: 6,
            n_stages: 1,
            iters_per_stage: 4,
            cache_refresh_period: 2,
            batch_size: 3,
            lr_backward: 1e-3,
            lr_forward: 1e-4,
            lr_decay: 0.999,
            divergence: DivergenceMode::Exact,
            hidden_widths: vec![8],
            embedding: EmbeddingSpec {
                diffusion_width: 4,
                feature_width: 2,
                time_width: 2,
            },
            sde: SdeSpec::ve(0.1, 1.0, 8).unwrap(),
            resample_masks: true,
            seed,
        }
    }

    #[test]
    fn identical_seeds_give_bitwise_identical_runs() {
        let ds = small_dataset(5);
        let cfg = tiny_cfg(21);
        let (pair_a, log_a) = train(&cfg, &ds).unwrap();
        let (pair_b, log_b) = train(&cfg, &ds).unwrap();
        assert_eq!(log_a, log_b);
        assert_eq!(pair_a.forward.data(), pair_b.forward.data());
        assert_eq!(pair_a.backward.data(), pair_b.backward.data());
        assert!(log_a
            .iter()
            .any(|e| matches!(e, LogEntry::CacheRefresh { .. })));
        let n_iters = log_a
            .iter()
            .filter(|e| matches!(e, LogEntry::Iteration { .. }))
            .count();
        assert_eq!(
            n_iters,
            cfg.warmup_iters + 2 * cfg.n_stages * cfg.iters_per_stage
        );
    }

    #[test]
    fn zero_stages_returns_the_warmup_only_pair() {
        let ds = small_dataset(6);
        let mut cfg = tiny_cfg(33);
        cfg.n_stages = 0;
        cfg.warmup_iters = 12;
        let (pair, log) = train(&cfg, &ds).unwrap();
        assert_eq!(log.len(), cfg.warmup_iters);
        assert!(log.iter().all(|e| matches!(
            e,
            LogEntry::Iteration {
                direction: Direction::Warmup,
                ..
            }
        )));

        let mut reference = PolicyPair::init(&cfg, 2, 6).unwrap();
        let ref_log = dsm_warmup(&mut reference, &ds, &cfg).unwrap();
        assert_eq!(ref_log, log);
        assert_eq!(reference.backward.data(), pair.backward.data());
        assert_eq!(reference.forward.data(), pair.forward.data());
    }

    #[test]
    fn score_only_training_matches_zero_stage_training_bitwise() {
        let ds = small_dataset(7);
        let mut cfg = tiny_cfg(44);
        cfg.n_stages = 0;
        cfg.warmup_iters = 15;
        let (pair, log_pair) = train(&cfg, &ds).unwrap();
        let (net, log_solo) = train_score_only(&cfg, &ds).unwrap();
        assert_eq!(log_pair, log_solo);
        assert_eq!(net.data(), pair.backward.data());
        assert_eq!(net.widths(), pair.backward.widths());
    }

    #[test]
    fn warmup_reduces_the_denoising_loss() {
        let ds = small_dataset(8);
        let mut cfg = tiny_cfg(55);
        cfg.warmup_iters = 300;
        cfg.batch_size = 16;
        cfg.sde = SdeSpec::ve(0.1, 1.0, 30).unwrap();
        let mut pair = PolicyPair::init(&cfg, 2, 6).unwrap();
        let log = dsm_warmup(&mut pair, &ds, &cfg).unwrap();
        let losses: Vec<f64> = log
            .iter()
            .map(|e| match e {
                LogEntry::Iteration { loss, .. } => *loss,
                _ => unreachable!(),
            })
            .collect();
        let head: f64 = losses[..20].iter().sum::<f64>() / 20.0;
        let tail: f64 = losses[losses.len() - 20..].iter().sum::<f64>() / 20.0;
        assert!(
            tail < head,
            "denoising loss did not decrease: {head} -> {tail}"
        );
    }

    #[test]
    fn near_degenerate_schedule_trains_to_small_output() {
        let ds = small_dataset(9);
        let mut cfg = tiny_cfg(66);
        cfg.warmup_iters = 800;
        cfg.batch_size = 16;
        cfg.sde = SdeSpec::ve(0.1, 0.101, 20).unwrap();
        let mut pair = PolicyPair::init(&cfg, 2, 6).unwrap();
        dsm_warmup(&mut pair, &ds, &cfg).unwrap();

        let mut eval_rng = rng::stream(123, domain::DATA, 99);
        let items = draw_warmup_batch(&ds, &cfg, 2, 6, &mut eval_rng).unwrap();
        let mut sq_sum = 0.0;
        let mut count = 0usize;
        for it in &items {
            let block = embed_at(&pair.embedding, &cfg.sde, it.t, 2, 6);
            let input = backward_input(&it.x_t, &it.x_cond, &it.m_cond, &block);
            let out = mlp_forward(&pair.backward, &input).unwrap();
            for i in 0..out.len() {
                if it.m_target[i] != 0 {
                    sq_sum += out[i] * out[i];
                    count += 1;
                }
            }
        }
        let rms = (sq_sum / count.max(1) as f64).sqrt();
        assert!(rms < 0.05, "trained output rms {rms} is not small");
    }

    #[test]
    fn non_finite_loss_reports_stage_and_iteration() {
        let masks = MaskSet::new(1, 2, vec![1, 1], vec![1, 0], vec![0, 1]).unwrap();
        let window = TimeSeriesWindow::new(vec![1e308, 1e308], masks, 0.0).unwrap();
        let config = SignalConfig {
            n_features: 1,
            n_times: 2,
            noise_sigma: 0.0,
            n_samples: 1,
            drop_ratio: 0.0,
            strategy: TargetStrategy::RandomRatio { ratio: 0.5 },
        };
        let ds = Dataset {
            seed: 0,
            config,
            windows: vec![window],
        };
        let mut cfg = tiny_cfg(77);
        cfg.resample_masks = false;
        let mut pair = PolicyPair::init(&cfg, 1, 2).unwrap();
        let err = dsm_warmup(&mut pair, &ds, &cfg).unwrap_err();
        match err {
            CsbiError::Divergence {
                stage,
                direction: Direction::Warmup,
                ..
            } => assert_eq!(stage, 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let ds = Dataset {
            seed: 0,
            config: SignalConfig {
                n_features: 1,
                n_times: 2,
                noise_sigma: 0.0,
                n_samples: 1,
                drop_ratio: 0.0,
                strategy: TargetStrategy::RandomRatio { ratio: 0.5 },
            },
            windows: vec![],
        };
        let cfg = tiny_cfg(88);
        assert!(matches!(train(&cfg, &ds), Err(CsbiError::EmptyDataset)));
    }

    #[test]
    fn desk_scale_training_reduces_the_backward_likelihood_loss() {
        let config = SignalConfig {
            n_features: 2,
            n_times: 20,
            noise_sigma: 0.05,
            n_samples: 64,
            drop_ratio: 0.1,
            strategy: TargetStrategy::RandomRatio { ratio: 0.5 },
        };
        let ds = generate(&config, 31).unwrap();
        let cfg = TrainConfig::desk(SdeSpec::ve(0.05, 2.5, 100).unwrap(), 13);
        let (_, log) = train(&cfg, &ds).unwrap();
        let backward_losses: Vec<f64> = log
            .iter()
            .filter_map(|e| match e {
                LogEntry::Iteration {
                    direction: Direction::Backward,
                    loss,
                    ..
                } => Some(*loss),
                _ => None,
            })
            .collect();
        assert_eq!(backward_losses.len(), cfg.n_stages * cfg.iters_per_stage);
        let head: f64 = backward_losses[..5].iter().sum::<f64>() / 5.0;
        let tail: f64 = backward_losses[backward_losses.len() - 5..]
            .iter()
            .sum::<f64>()
            / 5.0;
        assert!(
            tail < head,
            "backward likelihood loss did not decrease: {head} -> {tail}"
        );
    }
}
