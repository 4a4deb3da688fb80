//! Likelihood loss brackets for the two policies.
//!
//! The backward objective averages, over states drawn from cached forward
//! trajectories, the bracket
//!
//! `1/2 ||z_b ∘ M_target||^2 + g div(z_b ∘ M_target) + (z_f ∘ M_target)^T (z_b ∘ M_target)`
//!
//! and the forward objective mirrors it over cached backward trajectories
//! with an all-ones target mask and no conditioning. Both are minimized
//! directly; the divergence of the masked field sums `dz_i/dx_i` over target
//! coordinates only, computed either exactly (one dual pass per coordinate)
//! or with Rademacher probes supported on the target coordinates.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{
    backward_input, embed_at, field_scales, forward_input, CsbiError, DivergenceMode, PolicyPair,
    TrainConfig, TrajectoryCache,
};
use crate::neural::{mlp_forward, mlp_jvp_grad};
use crate::sde::SdeSpec;

/// A state drawn from a forward trajectory together with its conditioning
/// context, ready for the backward objective.
#[derive(Debug, Clone)]
pub struct BackwardSample {
    /// State on the grid at diffusion time `t`.
    pub x: Vec<f64>,
    /// Diffusion time the state was sampled at.
    pub t: f64,
    /// Conditioning values (zero outside the condition mask).
    pub x_cond: Vec<f64>,
    /// Condition mask.
    pub m_cond: Vec<u8>,
    /// Target mask the bracket is restricted to.
    pub m_target: Vec<u8>,
}

/// A state drawn from a backward trajectory for the forward objective, which
/// applies no masks.
#[derive(Debug, Clone)]
pub struct ForwardSample {
    /// State on the grid at diffusion time `t`.
    pub x: Vec<f64>,
    /// Diffusion time the state was sampled at.
    pub t: f64,
}

/// Monte-Carlo loss value and its gradient with respect to the trained
/// network's flat parameter vector.
#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub loss: f64,
    pub grad: Vec<f64>,
}

fn mask_indices(mask: &[u8]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter_map(|(i, &m)| (m != 0).then_some(i))
        .collect()
}

fn check_len(name: &str, got: usize, want: usize) -> Result<(), CsbiError> {
    if got != want {
        return Err(CsbiError::ShapeMismatch(format!(
            "{name} has length {got}, grid has {want} entries"
        )));
    }
    Ok(())
}

/// Backward objective on explicit samples with explicit divergence probes.
///
/// `probes` is one probe list per sample; `None` selects the exact
/// coordinate-basis divergence. Passing every sign pattern supported on the
/// sample's target coordinates reproduces the exact loss. The returned
/// gradient is with respect to the backward network's parameters.
pub fn backward_loss_with_probes(
    pair: &PolicyPair,
    spec: &SdeSpec,
    samples: &[BackwardSample],
    probes: Option<&[Vec<Vec<f64>>]>,
) -> Result<BatchLoss, CsbiError> {
    let d = pair.grid_len();
    if let Some(list) = probes {
        if list.len() != samples.len() {
            return Err(CsbiError::ShapeMismatch(format!(
                "{} probe lists for {} samples",
                list.len(),
                samples.len()
            )));
        }
    }
    let mut grad = vec![0.0; pair.backward.n_params()];
    let mut total = 0.0;
    for (s_idx, s) in samples.iter().enumerate() {
        check_len("state", s.x.len(), d)?;
        check_len("condition values", s.x_cond.len(), d)?;
        check_len("condition mask", s.m_cond.len(), d)?;
        check_len("target mask", s.m_target.len(), d)?;
        if s.m_cond.iter().zip(&s.m_target).any(|(&c, &t)| c != 0 && t != 0) {
            return Err(CsbiError::InvalidConfig(
                "condition and target masks overlap".into(),
            ));
        }
        let mt = mask_indices(&s.m_target);
        if mt.is_empty() {
            continue;
        }
        let sc = field_scales(spec, s.t)?;
        let block = embed_at(&pair.embedding, spec, s.t, pair.n_features, pair.n_times);
        let input_b = backward_input(&s.x, &s.x_cond, &s.m_cond, &block);
        let n_b = mlp_forward(&pair.backward, &input_b)?;
        let input_f = forward_input(&s.x, &block);
        let n_f = mlp_forward(&pair.forward, &input_f)?;

        let mut quad = 0.0;
        let mut cross = 0.0;
        for &i in &mt {
            quad += n_b[i] * n_b[i];
            cross += n_f[i] * n_b[i];
        }
        let mut upstream = vec![0.0; d];
        for &i in &mt {
            upstream[i] = sc.a_b * sc.a_b * n_b[i] + sc.g * sc.a_b * n_f[i];
        }
        let zero_upstream = vec![0.0; d];

        let mut div = 0.0;
        match probes {
            None => {
                let mut tangent = vec![0.0; input_b.len()];
                let mut ut = vec![0.0; d];
                for (k, &i) in mt.iter().enumerate() {
                    tangent[i] = 1.0;
                    ut[i] = sc.g * sc.a_b;
                    let uv = if k == 0 { &upstream } else { &zero_upstream };
                    let jg = mlp_jvp_grad(&pair.backward, &input_b, &tangent, uv, &ut)?;
                    div += jg.jv[i];
                    for (slot, v) in grad.iter_mut().zip(&jg.param_grads) {
                        *slot += v;
                    }
                    tangent[i] = 0.0;
                    ut[i] = 0.0;
                }
            }
            Some(list) => {
                let vs = &list[s_idx];
                if vs.is_empty() {
                    return Err(CsbiError::InvalidConfig(
                        "at least one divergence probe per sample".into(),
                    ));
                }
                let inv_p = 1.0 / vs.len() as f64;
                for (k, v) in vs.iter().enumerate() {
                    check_len("divergence probe", v.len(), d)?;
                    let mut tangent = vec![0.0; input_b.len()];
                    tangent[..d].copy_from_slice(v);
                    let mut ut = vec![0.0; d];
                    for &i in &mt {
                        ut[i] = sc.g * sc.a_b * inv_p * v[i];
                    }
                    let uv = if k == 0 { &upstream } else { &zero_upstream };
                    let jg = mlp_jvp_grad(&pair.backward, &input_b, &tangent, uv, &ut)?;
                    let mut est = 0.0;
                    for &i in &mt {
                        est += v[i] * jg.jv[i];
                    }
                    div += inv_p * est;
                    for (slot, g) in grad.iter_mut().zip(&jg.param_grads) {
                        *slot += g;
                    }
                }
            }
        }
        total += 0.5 * sc.a_b * sc.a_b * quad + sc.g * sc.a_b * div + sc.g * sc.a_b * cross;
    }
    let n = samples.len().max(1) as f64;
    for g in &mut grad {
        *g /= n;
    }
    Ok(BatchLoss {
        loss: total / n,
        grad,
    })
}

/// Forward objective on explicit samples with explicit divergence probes.
///
/// The bracket runs over every grid coordinate; the frozen backward policy
/// is evaluated without conditioning (zero condition values and mask). The
/// returned gradient is with respect to the forward network's parameters.
pub fn forward_loss_with_probes(
    pair: &PolicyPair,
    spec: &SdeSpec,
    samples: &[ForwardSample],
    probes: Option<&[Vec<Vec<f64>>]>,
) -> Result<BatchLoss, CsbiError> {
    let d = pair.grid_len();
    if let Some(list) = probes {
        if list.len() != samples.len() {
            return Err(CsbiError::ShapeMismatch(format!(
                "{} probe lists for {} samples",
                list.len(),
                samples.len()
            )));
        }
    }
    let zero_vals = vec![0.0; d];
    let zero_mask = vec![0u8; d];
    let mut grad = vec![0.0; pair.forward.n_params()];
    let mut total = 0.0;
    for (s_idx, s) in samples.iter().enumerate() {
        check_len("state", s.x.len(), d)?;
        let sc = field_scales(spec, s.t)?;
        let block = embed_at(&pair.embedding, spec, s.t, pair.n_features, pair.n_times);
        let input_f = forward_input(&s.x, &block);
        let n_f = mlp_forward(&pair.forward, &input_f)?;
        let input_b = backward_input(&s.x, &zero_vals, &zero_mask, &block);
        let n_b = mlp_forward(&pair.backward, &input_b)?;

        let mut quad = 0.0;
        let mut cross = 0.0;
        for i in 0..d {
            quad += n_f[i] * n_f[i];
            cross += n_b[i] * n_f[i];
        }
        let mut upstream = vec![0.0; d];
        for i in 0..d {
            upstream[i] = sc.g * sc.g * n_f[i] + sc.g * sc.a_b * n_b[i];
        }
        let zero_upstream = vec![0.0; d];

        let mut div = 0.0;
        match probes {
            None => {
                let mut tangent = vec![0.0; input_f.len()];
                let mut ut = vec![0.0; d];
                for i in 0..d {
                    tangent[i] = 1.0;
                    ut[i] = sc.g * sc.g;
                    let uv = if i == 0 { &upstream } else { &zero_upstream };
                    let jg = mlp_jvp_grad(&pair.forward, &input_f, &tangent, uv, &ut)?;
                    div += jg.jv[i];
                    for (slot, v) in grad.iter_mut().zip(&jg.param_grads) {
                        *slot += v;
                    }
                    tangent[i] = 0.0;
                    ut[i] = 0.0;
                }
            }
            Some(list) => {
                let vs = &list[s_idx];
                if vs.is_empty() {
                    return Err(CsbiError::InvalidConfig(
                        "at least one divergence probe per sample".into(),
                    ));
                }
                let inv_p = 1.0 / vs.len() as f64;
                for (k, v) in vs.iter().enumerate() {
                    check_len("divergence probe", v.len(), d)?;
                    let mut tangent = vec![0.0; input_f.len()];
                    tangent[..d].copy_from_slice(v);
                    let ut: Vec<f64> = v.iter().map(|&vi| sc.g * sc.g * inv_p * vi).collect();
                    let uv = if k == 0 { &upstream } else { &zero_upstream };
                    let jg = mlp_jvp_grad(&pair.forward, &input_f, &tangent, uv, &ut)?;
                    let mut est = 0.0;
                    for i in 0..d {
                        est += v[i] * jg.jv[i];
                    }
                    div += inv_p * est;
                    for (slot, g) in grad.iter_mut().zip(&jg.param_grads) {
                        *slot += g;
                    }
                }
            }
        }
        total += 0.5 * sc.g * sc.g * quad + sc.g * sc.g * div + sc.g * sc.a_b * cross;
    }
    let n = samples.len().max(1) as f64;
    for g in &mut grad {
        *g /= n;
    }
    Ok(BatchLoss {
        loss: total / n,
        grad,
    })
}

fn draw_probes(
    mode: DivergenceMode,
    mask: Option<&[u8]>,
    d: usize,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<Vec<f64>>> {
    match mode {
        DivergenceMode::Exact => None,
        DivergenceMode::Hutchinson { n_probes } => {
            let mut vs = Vec::with_capacity(n_probes);
            for _ in 0..n_probes {
                let mut v = vec![0.0; d];
                for (i, slot) in v.iter_mut().enumerate() {
                    if mask.map_or(true, |m| m[i] != 0) {
                        *slot = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                    }
                }
                vs.push(v);
            }
            Some(vs)
        }
    }
}

/// Backward objective over a cached batch of forward trajectories: one
/// uniformly drawn positive grid time per path, probes drawn here when the
/// config asks for the probe estimator. Fails if the cache is stale.
pub fn backward_loss(
    pair: &PolicyPair,
    cache: &TrajectoryCache,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<BatchLoss, CsbiError> {
    let items = cache.items()?;
    let dt = cfg.sde.dt();
    let mut samples = Vec::with_capacity(items.len());
    let mut probe_lists: Option<Vec<Vec<Vec<f64>>>> = match cfg.divergence {
        DivergenceMode::Exact => None,
        DivergenceMode::Hutchinson { .. } => Some(Vec::with_capacity(items.len())),
    };
    for item in items {
        let step = rng.gen_range(1..=cfg.sde.n_steps);
        let sample = BackwardSample {
            x: item.path.states[step].clone(),
            t: step as f64 * dt,
            x_cond: item.x_cond.clone(),
            m_cond: item.m_cond.clone(),
            m_target: item.m_target.clone(),
        };
        if let Some(lists) = probe_lists.as_mut() {
            let vs = draw_probes(cfg.divergence, Some(&sample.m_target), sample.x.len(), rng)
                .expect("probe mode");
            lists.push(vs);
        }
        samples.push(sample);
    }
    backward_loss_with_probes(pair, &cfg.sde, &samples, probe_lists.as_deref())
}

/// Forward objective over a cached batch of backward trajectories; mirror of
/// [`backward_loss`].
pub fn forward_loss(
    pair: &PolicyPair,
    cache: &TrajectoryCache,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<BatchLoss, CsbiError> {
    let items = cache.items()?;
    let dt = cfg.sde.dt();
    let mut samples = Vec::with_capacity(items.len());
    let mut probe_lists: Option<Vec<Vec<Vec<f64>>>> = match cfg.divergence {
        DivergenceMode::Exact => None,
        DivergenceMode::Hutchinson { .. } => Some(Vec::with_capacity(items.len())),
    };
    for item in items {
        let step = rng.gen_range(1..=cfg.sde.n_steps);
        let sample = ForwardSample {
            x: item.path.states[step].clone(),
            t: step as f64 * dt,
        };
        if let Some(lists) = probe_lists.as_mut() {
            let vs =
                draw_probes(cfg.divergence, None, sample.x.len(), rng).expect("probe mode");
            lists.push(vs);
        }
        samples.push(sample);
    }
    forward_loss_with_probes(pair, &cfg.sde, &samples, probe_lists.as_deref())
}
