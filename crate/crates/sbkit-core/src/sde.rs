//! Diffusion schedules, closed-form transition kernels, Euler–Maruyama
//! samplers, and the entropic transport cost derived from the kernel.
//!
//! Two reference diffusions are supported: variance-exploding (driftless,
//! `sigma(t) = sigma_min * (sigma_max/sigma_min)^t`) and variance-preserving
//! (Ornstein–Uhlenbeck with linear `beta(t)`). Transition kernels come in two
//! parameterizations: a constant-coefficient form with an explicit
//! regularizer `eps` (closed-form costs for the transport solver) and the
//! schedule form (used by training and sampling).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors for schedule evaluation and path sampling.
#[derive(Debug, Error)]
pub enum SdeError {
    #[error("time {t} outside horizon [0, {t_end}]")]
    TimeOutOfRange { t: f64, t_end: f64 },
    #[error("empty time interval: s={s} must be < t={t}")]
    EmptyInterval { s: f64, t: f64 },
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite state at step {step}")]
    Divergence { step: usize },
}

/// Kind of reference diffusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SdeKind {
    Ve,
    Vp,
}

/// Schedule parameters, horizon, and step count of a reference diffusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdeSpec {
    pub kind: SdeKind,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    pub t_end: f64,
    pub n_steps: usize,
}

impl SdeSpec {
    /// Variance-exploding spec over the unit horizon.
    pub fn ve(sigma_min: f64, sigma_max: f64, n_steps: usize) -> Result<Self, SdeError> {
        let spec = Self { kind: SdeKind::Ve, sigma_min, sigma_max, beta_min: 0.0, beta_max: 0.0, t_end: 1.0, n_steps };
        spec.validate()?;
        Ok(spec)
    }

    /// Variance-preserving spec over the unit horizon.
    pub fn vp(beta_min: f64, beta_max: f64, n_steps: usize) -> Result<Self, SdeError> {
        let spec = Self { kind: SdeKind::Vp, sigma_min: 0.0, sigma_max: 0.0, beta_min, beta_max, t_end: 1.0, n_steps };
        spec.validate()?;
        Ok(spec)
    }

    /// Replaces the horizon, revalidating.
    pub fn with_horizon(mut self, t_end: f64) -> Result<Self, SdeError> {
        self.t_end = t_end;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), SdeError> {
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(SdeError::InvalidSpec(format!("horizon must be positive and finite, got {}", self.t_end)));
        }
        if self.n_steps == 0 {
            return Err(SdeError::InvalidSpec("n_steps must be >= 1".into()));
        }
        match self.kind {
            SdeKind::Ve => {
                if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max) {
                    return Err(SdeError::InvalidSpec(format!(
                        "VE requires 0 < sigma_min < sigma_max, got ({}, {})",
                        self.sigma_min, self.sigma_max
                    )));
                }
            }
            SdeKind::Vp => {
                if !(self.beta_min >= 0.0 && self.beta_min <= self.beta_max) {
                    return Err(SdeError::InvalidSpec(format!(
                        "VP requires 0 <= beta_min <= beta_max, got ({}, {})",
                        self.beta_min, self.beta_max
                    )));
                }
            }
        }
        Ok(())
    }

    /// Step size of the uniform grid.
    pub fn dt(&self) -> f64 {
        self.t_end / self.n_steps as f64
    }

    /// The uniform time grid `0, dt, ..., t_end` (n_steps + 1 points).
    pub fn grid(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|i| i as f64 * self.dt()).collect()
    }

    fn check_time(&self, t: f64) -> Result<(), SdeError> {
        if !t.is_finite() || t < 0.0 || t > self.t_end {
            return Err(SdeError::TimeOutOfRange { t, t_end: self.t_end });
        }
        Ok(())
    }

    /// `beta(t) = beta_min + t (beta_max - beta_min)` on the unit-normalized clock.
    pub fn beta(&self, t: f64) -> f64 {
        self.beta_min + (t / self.t_end) * (self.beta_max - self.beta_min)
    }

    /// VE noise level `sigma(t) = sigma_min (sigma_max/sigma_min)^t`.
    pub fn sigma(&self, t: f64) -> f64 {
        self.sigma_min * (self.sigma_max / self.sigma_min).powf(t / self.t_end)
    }

    /// Integral of beta over [s, t].
    fn beta_integral(&self, s: f64, t: f64) -> f64 {
        let u0 = s / self.t_end;
        let u1 = t / self.t_end;
        self.t_end * (self.beta_min * (u1 - u0) + 0.5 * (self.beta_max - self.beta_min) * (u1 * u1 - u0 * u0))
    }

    /// Kernel variance accumulated from time 0 to `t` under the schedule form.
    pub fn accumulated_var(&self, t: f64) -> f64 {
        match self.kind {
            SdeKind::Ve => self.sigma(t).powi(2) - self.sigma(0.0).powi(2),
            SdeKind::Vp => 1.0 - (-self.beta_integral(0.0, t)).exp(),
        }
    }

    /// Drift of the uncontrolled SDE: zero for VE, `-beta(t) x / 2` for VP.
    pub fn drift(&self, x: f64, t: f64) -> f64 {
        match self.kind {
            SdeKind::Ve => 0.0,
            SdeKind::Vp => -0.5 * self.beta(t) * x,
        }
    }

    /// Standard deviation of the stationary-style prior at the horizon:
    /// `sigma_max` for VE, 1 for VP.
    pub fn prior_std(&self) -> f64 {
        match self.kind {
            SdeKind::Ve => self.sigma_max,
            SdeKind::Vp => 1.0,
        }
    }
}

/// A sampled trajectory on the uniform grid. `states[i]` is the state at
/// `times[i]`; times increase from 0 to the horizon regardless of the
/// direction the path was integrated in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl PathSample {
    /// State dimension.
    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    /// Terminal state at the horizon.
    pub fn terminal(&self) -> &[f64] {
        self.states.last().expect("non-empty path")
    }

    /// Initial state at time 0.
    pub fn initial(&self) -> &[f64] {
        self.states.first().expect("non-empty path")
    }
}

/// Gaussian transition kernel `N(mean, var * I)` with isotropic variance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    pub mean: Vec<f64>,
    pub var: f64,
}

/// Diffusion coefficient `g(t)` of the spec's schedule.
pub fn diffusion_coefficient(spec: &SdeSpec, t: f64) -> Result<f64, SdeError> {
    spec.check_time(t)?;
    Ok(match spec.kind {
        SdeKind::Ve => spec.sigma(t) * (2.0 * (spec.sigma_max / spec.sigma_min).ln()).sqrt() / spec.t_end.sqrt(),
        SdeKind::Vp => spec.beta(t).sqrt(),
    })
}

/// Transition kernel of the uncontrolled diffusion in schedule form:
/// VE keeps the mean and accumulates `sigma^2(t) - sigma^2(s)`; VP contracts
/// the mean by `exp(-integral(beta)/2)` with variance `1 - exp(-integral(beta))`.
pub fn transition_kernel(spec: &SdeSpec, s: f64, t: f64, x_s: &[f64]) -> Result<GaussianKernel, SdeError> {
    spec.check_time(s)?;
    spec.check_time(t)?;
    if s >= t {
        return Err(SdeError::EmptyInterval { s, t });
    }
    Ok(match spec.kind {
        SdeKind::Ve => GaussianKernel { mean: x_s.to_vec(), var: spec.sigma(t).powi(2) - spec.sigma(s).powi(2) },
        SdeKind::Vp => {
            let a = (-0.5 * spec.beta_integral(s, t)).exp();
            GaussianKernel { mean: x_s.iter().map(|&x| a * x).collect(), var: 1.0 - a * a }
        }
    })
}

/// Transition kernel of the constant-coefficient reference diffusion with
/// regularizer `eps`: Brownian motion (VE, variance `2 eps (t-s)`) or the
/// unit-rate Ornstein–Uhlenbeck process (VP, mean contraction `exp(-(t-s))`,
/// variance `eps (1 - exp(-2(t-s)))`).
pub fn transition_kernel_const_g(kind: SdeKind, eps: f64, s: f64, t: f64, x_s: &[f64]) -> Result<GaussianKernel, SdeError> {
    if !(eps > 0.0) {
        return Err(SdeError::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    if s >= t {
        return Err(SdeError::EmptyInterval { s, t });
    }
    let dt = t - s;
    Ok(match kind {
        SdeKind::Ve => GaussianKernel { mean: x_s.to_vec(), var: 2.0 * eps * dt },
        SdeKind::Vp => {
            let a = (-dt).exp();
            GaussianKernel { mean: x_s.iter().map(|&x| a * x).collect(), var: eps * (1.0 - a * a) }
        }
    })
}

fn check_finite(x: &[f64], step: usize) -> Result<(), SdeError> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SdeError::Divergence { step });
    }
    Ok(())
}

/// Policy drift callback: maps `(state, t)` to the policy field `z(x, t)`.
/// The integrator scales it by `g(t)` when forming the drift.
pub type PolicyFn<'a> = &'a (dyn Fn(&[f64], f64) -> Vec<f64> + Sync);

fn policy_value(policy: Option<PolicyFn<'_>>, x: &[f64], t: f64) -> Result<Option<Vec<f64>>, SdeError> {
    match policy {
        None => Ok(None),
        Some(z) => {
            let v = z(x, t);
            if v.len() != x.len() {
                return Err(SdeError::DimensionMismatch { expected: x.len(), got: v.len() });
            }
            Ok(Some(v))
        }
    }
}

/// Forward Euler–Maruyama trajectory of `dx = [f + g z->] dt + g dw` from
/// `x0` at time 0 to the horizon. Coefficients are evaluated at the left
/// endpoint of each step; every intermediate state is checked for finiteness.
pub fn em_forward(
    spec: &SdeSpec,
    x0: &[f64],
    policy: Option<PolicyFn<'_>>,
    rng: &mut ChaCha8Rng,
) -> Result<PathSample, SdeError> {
    check_finite(x0, 0)?;
    let dt = spec.dt();
    let d = x0.len();
    let mut states = Vec::with_capacity(spec.n_steps + 1);
    states.push(x0.to_vec());
    let mut x = x0.to_vec();
    for i in 0..spec.n_steps {
        let t = i as f64 * dt;
        let g = diffusion_coefficient(spec, t)?;
        let z = policy_value(policy, &x, t)?;
        for j in 0..d {
            let drift = spec.drift(x[j], t) + g * z.as_ref().map_or(0.0, |z| z[j]);
            let noise: f64 = rng.sample(StandardNormal);
            x[j] += drift * dt + g * dt.sqrt() * noise;
        }
        check_finite(&x, i + 1)?;
        states.push(x.clone());
    }
    Ok(PathSample { times: spec.grid(), states })
}

/// Backward Euler–Maruyama trajectory from `xT` at the horizon to time 0,
/// stepping `x_{i-1} = x_i + [-f + g z<-] dt + g sqrt(dt) xi`. The returned
/// path is stored on the increasing grid (`states[0]` is the time-0 state).
pub fn em_backward(
    spec: &SdeSpec,
    x_t: &[f64],
    policy: PolicyFn<'_>,
    rng: &mut ChaCha8Rng,
) -> Result<PathSample, SdeError> {
    check_finite(x_t, spec.n_steps)?;
    let dt = spec.dt();
    let d = x_t.len();
    let mut states = vec![Vec::new(); spec.n_steps + 1];
    states[spec.n_steps] = x_t.to_vec();
    let mut x = x_t.to_vec();
    for i in (1..=spec.n_steps).rev() {
        let t = i as f64 * dt;
        let g = diffusion_coefficient(spec, t)?;
        let z = policy_value(Some(policy), &x, t)?.expect("policy present");
        for j in 0..d {
            let drift = -spec.drift(x[j], t) + g * z[j];
            let noise: f64 = rng.sample(StandardNormal);
            x[j] += drift * dt + g * dt.sqrt() * noise;
        }
        check_finite(&x, i - 1)?;
        states[i - 1] = x.clone();
    }
    Ok(PathSample { times: spec.grid(), states })
}

/// Samples an ensemble of forward paths in parallel, one rng stream per
/// path; the output order matches the input order regardless of scheduling.
pub fn em_forward_ensemble(
    spec: &SdeSpec,
    x0s: &[Vec<f64>],
    policy: Option<PolicyFn<'_>>,
    streams: Vec<ChaCha8Rng>,
) -> Result<Vec<PathSample>, SdeError> {
    assert_eq!(x0s.len(), streams.len(), "one rng stream per path");
    x0s.par_iter()
        .zip(streams.into_par_iter())
        .map(|(x0, mut rng)| em_forward(spec, x0, policy, &mut rng))
        .collect()
}

/// Backward counterpart of [`em_forward_ensemble`].
pub fn em_backward_ensemble(
    spec: &SdeSpec,
    xts: &[Vec<f64>],
    policy: PolicyFn<'_>,
    streams: Vec<ChaCha8Rng>,
) -> Result<Vec<PathSample>, SdeError> {
    assert_eq!(xts.len(), streams.len(), "one rng stream per path");
    xts.par_iter()
        .zip(streams.into_par_iter())
        .map(|(xt, mut rng)| em_backward(spec, xt, policy, &mut rng))
        .collect()
}

/// Entropic transport cost `c_eps(x, y) = -log Ker_eps(0, x, T, y)` from the
/// constant-coefficient kernel of the spec's kind, normalizing constant
/// included. Returns the `xs.len() x ys.len()` cost matrix.
pub fn eot_cost(spec: &SdeSpec, eps: f64, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, SdeError> {
    if !(eps > 0.0) {
        return Err(SdeError::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    let d = xs.first().or(ys.first()).map_or(0, Vec::len);
    for p in xs.iter().chain(ys.iter()) {
        if p.len() != d {
            return Err(SdeError::DimensionMismatch { expected: d, got: p.len() });
        }
    }
    let t_end = spec.t_end;
    let cost = |x: &[f64], y: &[f64]| -> f64 {
        match spec.kind {
            SdeKind::Ve => {
                let var = 2.0 * eps * t_end;
                let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                0.5 * d as f64 * (2.0 * std::f64::consts::PI * var).ln() + sq / (2.0 * var)
            }
            SdeKind::Vp => {
                let a = (-t_end).exp();
                let var = eps * (1.0 - a * a);
                let sq: f64 = x.iter().zip(y).map(|(xi, yi)| (yi - a * xi) * (yi - a * xi)).sum();
                0.5 * d as f64 * (2.0 * std::f64::consts::PI * eps * t_end).ln() + sq / (2.0 * var)
            }
        }
    };
    Ok(xs.iter().map(|x| ys.iter().map(|y| cost(x, y)).collect()).collect())
}
