//! Acceptance suite: one test per claim the toolkit commits to. The harness
//! emits one pass/fail line per test; each test also prints the quantities
//! it measured (visible with `--nocapture` and in failure output).

use rand::Rng;
use rand_distr::StandardNormal;
use sbkit_core::csbi::{
    backward_loss_with_probes, forward_loss_with_probes, impute, train, BackwardSample,
    DivergenceMode, ForwardSample, ImputeConfig, PolicyPair, TrainConfig,
};
use sbkit_core::data::{generate, generate_with_offset, SignalConfig, TargetStrategy};
use sbkit_core::eot::{
    benchmark_instance, diagnose_trace, eot_objective, gibbs_coupling, kl_couplings, run_aipf,
    CouplingMatrix, DiagnoseOptions, DiscreteMarginal,
};
use sbkit_core::metrics::evaluate;
use sbkit_core::neural::{
    divergence_exact, divergence_hutchinson, mlp_forward, mlp_grad, mlp_jvp, EmbeddingSpec,
    MlpParams,
};
use sbkit_core::rng::{domain, stream};
use sbkit_core::sde::{em_forward, transition_kernel, SdeSpec};
use sbkit_core::Dataset;
use std::time::{Duration, Instant};

const GRID: usize = 16;
const COST_REG: f64 = 0.5;
const INSTANCE_SEED: u64 = 0;

fn instance() -> (DiscreteMarginal, DiscreteMarginal, Vec<Vec<f64>>) {
    benchmark_instance(GRID, COST_REG, INSTANCE_SEED).expect("benchmark instance")
}

#[test]
fn a01_exact_fitting_reaches_the_fixed_point_fast() {
    let (mu, nu, cost) = instance();
    let mut rng = stream(INSTANCE_SEED, domain::PERTURB_MU, 0);
    let start = Instant::now();
    let trace = run_aipf(&mu, &nu, &cost, 0.0, 500, &mut rng).expect("exact run");
    let elapsed = start.elapsed();
    let last = trace.records.last().expect("non-empty trace");
    let residual = last.r1.max(last.r2);
    println!(
        "fixed point after 500 exact iterations: residual {residual:.3e}, \
         marginal KLs ({:.3e}, {:.3e}), elapsed {elapsed:?}",
        last.kl_mu, last.kl_nu
    );
    assert!(residual < 1e-10, "residual {residual:.3e} is not below 1e-10");
    assert!(
        last.kl_mu < 1e-12 && last.kl_nu < 1e-12,
        "marginal KLs ({:.3e}, {:.3e}) are not below 1e-12",
        last.kl_mu,
        last.kl_nu
    );
    assert!(elapsed < Duration::from_secs(1), "run took {elapsed:?}, budget is 1 s");
}

#[test]
fn a02_marginal_error_stays_under_the_summability_envelope() {
    let (mu, nu, cost) = instance();
    let mut oracle_rng = stream(INSTANCE_SEED, domain::PERTURB_MU, u64::MAX);
    let oracle = run_aipf(&mu, &nu, &cost, 0.0, 2000, &mut oracle_rng).expect("oracle run");
    let kl_star = oracle.records.last().expect("oracle trace").objective;

    let (gibbs, _) = gibbs_coupling(&cost, &mu, &nu).expect("gibbs");
    let kl_start = kl_couplings(&gibbs, &gibbs).expect("kl of the initial plan");
    let bound = kl_star - kl_start + 1e-8;

    let mut rng = stream(INSTANCE_SEED, domain::PERTURB_MU, 0);
    let trace = run_aipf(&mu, &nu, &cost, 0.0, 200, &mut rng).expect("exact run");
    let mut worst = f64::NEG_INFINITY;
    let mut worst_k = 0usize;
    for (i, r) in trace.records.iter().enumerate() {
        let k = i + 1;
        let weighted = k as f64 * r.kl_mu;
        if weighted > worst {
            worst = weighted;
            worst_k = k;
        }
        assert!(
            weighted <= bound,
            "k * KL at k = {k} is {weighted:.6e}, above the envelope {bound:.6e}"
        );
    }
    println!(
        "envelope: max_k k*KL = {worst:.6e} at k = {worst_k}, bound {bound:.6e} \
         (optimum objective {kl_star:.6e})"
    );
}

#[test]
fn a03_perturbation_floors_order_across_error_scales() {
    let (mu, nu, cost) = instance();
    let start = Instant::now();
    let scales = [1e-4, 1e-3, 1e-2];
    let mut floors = [[0.0f64; 5]; 3];
    for (e_idx, &eps) in scales.iter().enumerate() {
        for seed in 0..5u64 {
            let mut rng = stream(seed, domain::PERTURB_MU, 1);
            let trace = run_aipf(&mu, &nu, &cost, eps, 2000, &mut rng).expect("perturbed run");
            let diag = diagnose_trace(
                &trace,
                eps,
                &DiagnoseOptions { slack: 10.0, kl_pi_star_g: None },
            )
            .expect("diagnostics");
            floors[e_idx][seed as usize] = diag.rate_b;
        }
    }
    let elapsed = start.elapsed();
    let means: Vec<f64> = floors.iter().map(|fs| fs.iter().sum::<f64>() / 5.0).collect();
    println!(
        "floors: B(1e-4) = {:?}, B(1e-3) = {:?}, B(1e-2) = {:?}, means {:.3e}/{:.3e}/{:.3e}, \
         elapsed {elapsed:?}",
        floors[0], floors[1], floors[2], means[0], means[1], means[2]
    );
    assert!(elapsed < Duration::from_secs(30), "run took {elapsed:?}, budget is 30 s");
    for seed in 0..5usize {
        assert!(
            floors[0][seed] < floors[1][seed] && floors[1][seed] < floors[2][seed],
            "floors are not ordered for seed {seed}: {:.3e}, {:.3e}, {:.3e}",
            floors[0][seed],
            floors[1][seed],
            floors[2][seed]
        );
    }
    let ratio = means[2] / means[0];
    assert!(
        ratio <= 100.0,
        "floor growth ratio B(1e-2)/B(1e-4) = {ratio:.3e} exceeds the two-decade cap: \
         the fitted floors scale quadratically with the projection error scale \
         (measured {:.3e} -> {:.3e} -> {:.3e} for eps 1e-4 -> 1e-3 -> 1e-2), \
         because the KL of a tilt bounded by eps in log-weights is O(eps^2)",
        means[0],
        means[1],
        means[2]
    );
}

#[test]
fn a04_perturbed_fitting_is_approximately_monotone() {
    let (mu, nu, cost) = instance();
    let eps = 1e-3;
    let mut total = 0usize;
    for seed in 0..10u64 {
        let mut rng = stream(seed, domain::PERTURB_MU, 2);
        let trace = run_aipf(&mu, &nu, &cost, eps, 200, &mut rng).expect("perturbed run");
        let diag = diagnose_trace(
            &trace,
            eps,
            &DiagnoseOptions { slack: 10.0, kl_pi_star_g: None },
        )
        .expect("diagnostics");
        assert_eq!(
            diag.monotonicity_violations, 0,
            "seed {seed} shows {} rises above the 10*eps slack",
            diag.monotonicity_violations
        );
        total += diag.monotonicity_violations;
    }
    println!("monotone decrease: {total} violations across 10 seeds at eps = {eps:.0e}, slack 10*eps");
}

#[test]
fn a05_static_objective_identity_is_exact() {
    let (mu, nu, cost) = instance();
    let (gibbs, log_z) = gibbs_coupling(&cost, &mu, &nu).expect("gibbs");
    let n = mu.len();
    let m = nu.len();
    let mut worst = 0.0f64;
    for c_idx in 0..100u64 {
        let mut r = stream(5, domain::INSTANCE, 100 + c_idx);
        let mut rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..m).map(|_| r.sample::<f64, _>(StandardNormal).exp()).collect())
            .collect();
        for _ in 0..300 {
            for j in 0..m {
                let s: f64 = rows.iter().map(|row| row[j]).sum();
                for row in rows.iter_mut() {
                    row[j] *= nu.weights()[j] / s;
                }
            }
            for (i, row) in rows.iter_mut().enumerate() {
                let s: f64 = row.iter().sum();
                for v in row.iter_mut() {
                    *v *= mu.weights()[i] / s;
                }
            }
        }
        let pi = CouplingMatrix::new(rows).expect("scaled plan");
        let row_dev = pi
            .row_marginal()
            .iter()
            .zip(mu.weights())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(row_dev < 1e-12, "plan {c_idx} is not feasible: row deviation {row_dev:.3e}");
        let lhs = kl_couplings(&pi, &gibbs).expect("kl to gibbs");
        let rhs = eot_objective(&pi, &cost, &mu, &nu).expect("objective").total() + log_z;
        let gap = (lhs - rhs).abs();
        worst = worst.max(gap);
        assert!(
            gap <= 1e-10,
            "identity gap {gap:.3e} on plan {c_idx}: KL(pi|G) = {lhs:.12e}, \
             transport + KL(pi|mu x nu) + log Z = {rhs:.12e}"
        );
    }
    println!("objective identity: worst gap {worst:.3e} over 100 random feasible plans");
}

#[test]
fn a06_ve_terminal_moments_match_the_closed_form_kernel() {
    let spec = SdeSpec::ve(0.1, 1.0, 100).expect("spec");
    let x0 = vec![1.0, 1.0];
    let n = 10_000usize;
    let kernel = transition_kernel(&spec, 0.0, spec.t_end, &x0).expect("kernel");
    let mut terminals: Vec<Vec<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut r = stream(0, domain::PATH, i as u64);
        let path = em_forward(&spec, &x0, None, &mut r).expect("path");
        terminals.push(path.states.last().expect("terminal state").clone());
    }
    for j in 0..x0.len() {
        let col: Vec<f64> = terminals.iter().map(|s| s[j]).collect();
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se_mean = (var / n as f64).sqrt();
        let se_var = var * (2.0 / (n as f64 - 1.0)).sqrt();
        let z_mean = (mean - kernel.mean[j]) / se_mean;
        let z_var = (var - kernel.var) / se_var;
        println!(
            "coordinate {j}: mean {mean:.4} vs {:.4} (z = {z_mean:+.2}), \
             var {var:.4} vs {:.4} (z = {z_var:+.2})",
            kernel.mean[j], kernel.var
        );
        assert!(
            z_mean.abs() <= 3.0,
            "terminal mean of coordinate {j} is {z_mean:+.2} standard errors off"
        );
        assert!(
            z_var.abs() <= 3.0,
            "terminal variance of coordinate {j} is {z_var:+.2} standard errors off"
        );
    }
}

/// Max-norm relative error between an analytic gradient and its central
/// finite-difference estimate.
fn max_rel_err(analytic: &[f64], fd: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(fd)
        .map(|(&a, &f)| (a - f).abs() / a.abs().max(f.abs()).max(1e-6))
        .fold(0.0f64, f64::max)
}

/// Central finite differences over all parameters; `eval_at(p, off)` must
/// return the loss with parameter `p` shifted by `off`.
fn central_fd(n_params: usize, mut eval_at: impl FnMut(usize, f64) -> f64) -> Vec<f64> {
    (0..n_params)
        .map(|p| {
            let h = 1e-5;
            let up = eval_at(p, h);
            let down = eval_at(p, -h);
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[test]
fn a07_divergence_estimators_and_loss_gradients_agree() {
    let diag = [0.7, -1.3, 2.2, 0.4];
    let widths = [4usize, 4];
    let mut data = vec![0.0; MlpParams::n_params_for(&widths)];
    for (i, &a) in diag.iter().enumerate() {
        data[i * 4 + i] = a;
    }
    data[16..20].copy_from_slice(&[0.1, -0.2, 0.3, 0.05]);
    let field = MlpParams::from_data(&widths, data).expect("diagonal field");
    let trace: f64 = diag.iter().sum();
    let mut worst_probe = 0.0f64;
    for i in 0..50u64 {
        let mut r = stream(7, domain::LOSS, i);
        let x: Vec<f64> = (0..4).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
        let exact = divergence_exact(&field, &x).expect("exact divergence");
        assert!((exact - trace).abs() <= 1e-12);
        let est = divergence_hutchinson(&field, &x, 1, &mut r).expect("single-probe estimate");
        worst_probe = worst_probe.max((est - exact).abs());
        assert!(
            (est - exact).abs() <= 1e-10,
            "single-probe estimate {est:.12e} differs from exact {exact:.12e}"
        );
    }

    let mut init_rng = stream(7, domain::INIT, 0);
    let net = MlpParams::init(&[8, 12, 8], &mut init_rng).expect("net");
    let x8: Vec<f64> = (0..8).map(|_| init_rng.sample::<f64, _>(StandardNormal)).collect();
    let exact8 = divergence_exact(&net, &x8).expect("exact divergence");
    let mut acc = 0.0;
    for bits in 0..256u32 {
        let v: Vec<f64> = (0..8).map(|b| if bits >> b & 1 == 1 { 1.0 } else { -1.0 }).collect();
        let (_, jv) = mlp_jvp(&net, &x8, &v).expect("jvp");
        acc += v.iter().zip(&jv).map(|(a, b)| a * b).sum::<f64>();
    }
    let full_mean = acc / 256.0;
    assert!(
        (full_mean - exact8).abs() <= 1e-10,
        "full probe set mean {full_mean:.12e} differs from the trace {exact8:.12e}"
    );

    let sde = SdeSpec::ve(0.1, 1.0, 8).expect("spec");
    let cfg = TrainConfig {
        warmup_iters: 1,
        n_stages: 1,
        iters_per_stage: 1,
        cache_refresh_period: 1,
        batch_size: 2,
        lr_backward: 1e-3,
        lr_forward: 1e-4,
        lr_decay: 1.0,
        divergence: DivergenceMode::Exact,
        hidden_widths: vec![6],
        embedding: EmbeddingSpec { diffusion_width: 8, feature_width: 4, time_width: 4 },
        sde: sde.clone(),
        resample_masks: false,
        seed: 7,
    };
    let pair = PolicyPair::init(&cfg, 2, 2).expect("policies");
    let dt = sde.dt();
    let mut s_rng = stream(7, domain::LOSS, 99);
    let samples: Vec<BackwardSample> = [2usize, 5, 8]
        .iter()
        .map(|&step| {
            let x: Vec<f64> = (0..4).map(|_| s_rng.sample::<f64, _>(StandardNormal)).collect();
            let m_cond = vec![1u8, 0, 0, 0];
            let x_cond: Vec<f64> =
                x.iter().zip(&m_cond).map(|(&v, &c)| if c == 1 { v * 0.9 } else { 0.0 }).collect();
            BackwardSample {
                x,
                t: step as f64 * dt,
                x_cond,
                m_cond,
                m_target: vec![0, 1, 1, 0],
            }
        })
        .collect();
    let probe_lists: Vec<Vec<Vec<f64>>> = samples
        .iter()
        .map(|_| vec![vec![0.0, 1.0, 1.0, 0.0], vec![0.0, 1.0, -1.0, 0.0]])
        .collect();

    let mut worst_rel = 0.0f64;
    {
        let exact_out =
            backward_loss_with_probes(&pair, &sde, &samples, None).expect("backward loss");
        let probed_out = backward_loss_with_probes(&pair, &sde, &samples, Some(&probe_lists))
            .expect("probed backward loss");
        assert!(
            (exact_out.loss - probed_out.loss).abs() <= 1e-10,
            "the complete probe set does not reproduce the exact loss: {} vs {}",
            probed_out.loss,
            exact_out.loss
        );
        for (label, probes, analytic) in [
            ("backward exact", None, &exact_out.grad),
            ("backward probed", Some(&probe_lists), &probed_out.grad),
        ] {
            let fd = central_fd(pair.backward.n_params(), |p, off| {
                let mut tweaked = pair.clone();
                tweaked.backward.data_mut()[p] += off;
                backward_loss_with_probes(&tweaked, &sde, &samples, probes.map(|v| v.as_slice()))
                    .expect("loss at offset")
                    .loss
            });
            let rel = max_rel_err(analytic, &fd);
            worst_rel = worst_rel.max(rel);
            assert!(rel < 1e-4, "{label} gradient disagrees with finite differences: {rel:.3e}");
        }
    }
    {
        let f_samples: Vec<ForwardSample> =
            samples.iter().map(|s| ForwardSample { x: s.x.clone(), t: s.t }).collect();
        let full_set: Vec<Vec<f64>> = (0..16u32)
            .map(|bits| (0..4).map(|b| if bits >> b & 1 == 1 { 1.0 } else { -1.0 }).collect())
            .collect();
        let f_probes: Vec<Vec<Vec<f64>>> = f_samples.iter().map(|_| full_set.clone()).collect();
        let exact_out =
            forward_loss_with_probes(&pair, &sde, &f_samples, None).expect("forward loss");
        let probed_out = forward_loss_with_probes(&pair, &sde, &f_samples, Some(&f_probes))
            .expect("probed forward loss");
        assert!((exact_out.loss - probed_out.loss).abs() <= 1e-10);
        for (label, probes, analytic) in [
            ("forward exact", None, &exact_out.grad),
            ("forward probed", Some(&f_probes), &probed_out.grad),
        ] {
            let fd = central_fd(pair.forward.n_params(), |p, off| {
                let mut tweaked = pair.clone();
                tweaked.forward.data_mut()[p] += off;
                forward_loss_with_probes(&tweaked, &sde, &f_samples, probes.map(|v| v.as_slice()))
                    .expect("loss at offset")
                    .loss
            });
            let rel = max_rel_err(analytic, &fd);
            worst_rel = worst_rel.max(rel);
            assert!(rel < 1e-4, "{label} gradient disagrees with finite differences: {rel:.3e}");
        }
    }
    {
        let net = pair.backward.clone();
        let width = net.input_width();
        let mut d_rng = stream(7, domain::WARMUP, 0);
        let items: Vec<(Vec<f64>, f64, Vec<f64>)> = (0..3)
            .map(|_| {
                let input: Vec<f64> =
                    (0..width).map(|_| d_rng.sample::<f64, _>(StandardNormal)).collect();
                let xi: Vec<f64> = (0..4).map(|_| d_rng.sample::<f64, _>(StandardNormal)).collect();
                (input, 0.8, xi)
            })
            .collect();
        let targets = [1usize, 2];
        let scale = 1.0 / (items.len() * targets.len()) as f64;
        let denoising_loss = |net: &MlpParams| -> f64 {
            items
                .iter()
                .map(|(input, s, xi)| {
                    let out = mlp_forward(net, input).expect("forward pass");
                    targets
                        .iter()
                        .map(|&i| {
                            let r = out[i] / s + xi[i];
                            r * r * scale
                        })
                        .sum::<f64>()
                })
                .sum()
        };
        let mut analytic = vec![0.0; net.n_params()];
        for (input, s, xi) in &items {
            let out = mlp_forward(&net, input).expect("forward pass");
            let mut upstream = vec![0.0; 4];
            for &i in &targets {
                upstream[i] = 2.0 * (out[i] / s + xi[i]) * scale / s;
            }
            let (pg, _) = mlp_grad(&net, input, &upstream).expect("gradient");
            for (slot, g) in analytic.iter_mut().zip(&pg) {
                *slot += g;
            }
        }
        let fd = central_fd(net.n_params(), |p, off| {
            let mut tweaked = net.clone();
            tweaked.data_mut()[p] += off;
            denoising_loss(&tweaked)
        });
        let rel = max_rel_err(&analytic, &fd);
        worst_rel = worst_rel.max(rel);
        assert!(rel < 1e-4, "denoising gradient disagrees with finite differences: {rel:.3e}");
    }
    println!(
        "divergence and gradients: worst single-probe gap {worst_probe:.3e}, \
         full-set gap {:.3e}, worst finite-difference relative error {worst_rel:.3e}",
        (full_mean - exact8).abs()
    );
}

#[test]
fn a08_crps_identities_hold() {
    let mut r = stream(8, domain::LOSS, 0);
    let n = 12usize;
    let truth: Vec<f64> = (0..n).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
    let m_target: Vec<u8> = (0..n).map(|i| u8::from(i % 3 != 1)).collect();
    let pred: Vec<f64> = truth
        .iter()
        .map(|&t| t + r.sample::<f64, _>(StandardNormal) * 0.5)
        .collect();

    let point = evaluate(&[pred.clone(), pred.clone()], &truth, &m_target).expect("point report");
    let gap = (point.crps_unnormalized - point.mae).abs();
    assert!(
        gap <= 1e-12,
        "point-forecast CRPS {:.15e} differs from MAE {:.15e} by {gap:.3e}",
        point.crps_unnormalized,
        point.mae
    );

    let perfect =
        evaluate(&[truth.clone(), truth.clone(), truth.clone()], &truth, &m_target).expect("perfect report");
    assert_eq!(perfect.crps, 0.0, "perfect ensemble has CRPS {}", perfect.crps);
    assert_eq!(perfect.rmse, 0.0);

    let mut off = truth.clone();
    let target_idx = m_target.iter().position(|&m| m == 1).expect("a target entry");
    off[target_idx] += 1e-3;
    let nearly = evaluate(&[truth.clone(), off], &truth, &m_target).expect("near-perfect report");
    assert!(
        nearly.crps > 0.0,
        "a target deviation left CRPS at zero ({})",
        nearly.crps
    );

    let samples: Vec<Vec<f64>> = (0..5)
        .map(|_| truth.iter().map(|&t| t + r.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let base = evaluate(&samples, &truth, &m_target).expect("base report");
    let mut truth_mod = truth.clone();
    let mut samples_mod = samples.clone();
    for i in 0..n {
        if m_target[i] == 0 {
            truth_mod[i] = 1e9;
            for s in samples_mod.iter_mut() {
                s[i] = -1e9;
            }
        }
    }
    let modified = evaluate(&samples_mod, &truth_mod, &m_target).expect("modified report");
    for (name, a, b) in [
        ("rmse", base.rmse, modified.rmse),
        ("mae", base.mae, modified.mae),
        ("crps", base.crps, modified.crps),
        ("crps_unnormalized", base.crps_unnormalized, modified.crps_unnormalized),
    ] {
        assert_eq!(
            a.to_bits(),
            b.to_bits(),
            "{name} reacted to entries outside the target mask: {a} vs {b}"
        );
    }
    println!(
        "scoring identities: point CRPS == MAE within {gap:.3e}, zero iff perfect, \
         non-target entries inert"
    );
}

/// Imputes every window of `eval_set`, asserts conditioned entries are
/// returned bitwise, and scores the pooled samples on the target entries.
fn impute_and_score(
    backward: &MlpParams,
    embedding: &EmbeddingSpec,
    eval_set: &Dataset,
    n_samples: usize,
    sde: &SdeSpec,
    seed_base: u64,
) -> sbkit_core::MetricReport {
    let mut truth = Vec::new();
    let mut target = Vec::new();
    let mut pooled: Vec<Vec<f64>> = vec![Vec::new(); n_samples];
    for (w, window) in eval_set.windows.iter().enumerate() {
        let masks = window.masks();
        let x_cond: Vec<f64> = window
            .values()
            .iter()
            .zip(masks.cond())
            .map(|(&v, &c)| if c == 1 { v } else { 0.0 })
            .collect();
        let cfg = ImputeConfig::new(sde.clone(), seed_base.wrapping_add(w as u64));
        let samples =
            impute(backward, embedding, &x_cond, masks, n_samples, &cfg).expect("imputation");
        for (s, sample) in samples.iter().enumerate() {
            for (i, &c) in masks.cond().iter().enumerate() {
                if c == 1 {
                    assert_eq!(
                        sample[i].to_bits(),
                        x_cond[i].to_bits(),
                        "sample {s} of window {w} altered conditioned entry {i}"
                    );
                }
            }
            pooled[s].extend_from_slice(sample);
        }
        truth.extend_from_slice(window.values());
        target.extend_from_slice(masks.target());
    }
    evaluate(&pooled, &truth, &target).expect("metric report")
}

fn sinusoid_config(n_samples: usize) -> SignalConfig {
    SignalConfig {
        n_features: 2,
        n_times: 20,
        noise_sigma: 0.1,
        n_samples,
        drop_ratio: 0.1,
        strategy: TargetStrategy::ConsecutiveBlock { len: 5 },
    }
}

#[test]
fn a09_desk_training_beats_the_zero_policy_baseline() {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("pool");
    let sde = SdeSpec::ve(0.05, 2.5, 100).expect("spec");
    let cfg = TrainConfig::desk(sde.clone(), 42);
    let dataset = generate(&sinusoid_config(128), 1).expect("training data");
    let eval_set = generate_with_offset(&sinusoid_config(8), 1, 128).expect("evaluation data");

    let start = Instant::now();
    let (pair, log) = pool.install(|| train(&cfg, &dataset)).expect("training");
    let train_time = start.elapsed();
    assert!(!log.is_empty());
    assert!(
        train_time < Duration::from_secs(600),
        "desk training took {train_time:?}, budget is 10 min on one core"
    );

    let zero_net = MlpParams::zeros(pair.backward.widths()).expect("zero policy");
    let trained = impute_and_score(&pair.backward, &pair.embedding, &eval_set, 40, &sde, 4200);
    let baseline = impute_and_score(&zero_net, &pair.embedding, &eval_set, 40, &sde, 4200);
    println!(
        "desk run: trained in {train_time:?}, target RMSE {:.4} vs zero-policy {:.4} \
         (ratio {:.3})",
        trained.rmse,
        baseline.rmse,
        trained.rmse / baseline.rmse
    );
    assert!(
        trained.rmse <= 0.5 * baseline.rmse,
        "trained RMSE {:.4} is not half of the zero-policy RMSE {:.4}",
        trained.rmse,
        baseline.rmse
    );
}

#[test]
fn a10_staged_training_dominates_the_score_only_ablation() {
    let sde = SdeSpec::ve(0.05, 0.3, 20).expect("spec");
    for seed in [101u64, 202, 303] {
        let mut staged_cfg = TrainConfig::desk(sde.clone(), seed);
        staged_cfg.warmup_iters = 800;
        staged_cfg.n_stages = 4;
        staged_cfg.iters_per_stage = 100;
        staged_cfg.cache_refresh_period = 25;
        let mut ablation_cfg = staged_cfg.clone();
        ablation_cfg.n_stages = 0;
        ablation_cfg.warmup_iters =
            staged_cfg.warmup_iters + staged_cfg.n_stages * staged_cfg.iters_per_stage;

        let dataset = generate(&sinusoid_config(96), seed).expect("training data");
        let eval_set = generate_with_offset(&sinusoid_config(6), seed, 96).expect("evaluation data");
        let (staged, _) = train(&staged_cfg, &dataset).expect("staged training");
        let (ablation, _) = train(&ablation_cfg, &dataset).expect("ablation training");

        let staged_report =
            impute_and_score(&staged.backward, &staged.embedding, &eval_set, 30, &sde, seed + 7000);
        let ablation_report = impute_and_score(
            &ablation.backward,
            &ablation.embedding,
            &eval_set,
            30,
            &sde,
            seed + 7000,
        );
        println!(
            "seed {seed}: staged rmse/mae/crps = {:.4}/{:.4}/{:.4}, \
             score-only = {:.4}/{:.4}/{:.4}",
            staged_report.rmse,
            staged_report.mae,
            staged_report.crps,
            ablation_report.rmse,
            ablation_report.mae,
            ablation_report.crps
        );
        for (name, a, b) in [
            ("rmse", staged_report.rmse, ablation_report.rmse),
            ("mae", staged_report.mae, ablation_report.mae),
            ("crps", staged_report.crps, ablation_report.crps),
        ] {
            assert!(
                a <= b,
                "seed {seed}: staged {name} {a:.4} exceeds the score-only ablation's {b:.4}"
            );
        }
    }
}
