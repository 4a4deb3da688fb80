//! AdamW with decoupled weight decay, bias correction, and a per-step
//! exponential learning-rate decay. The first step uses the base learning
//! rate exactly; step `t` uses `lr * decay^(t-1)`.

use serde::{Deserialize, Serialize};

use super::mlp::MlpParams;
use super::NeuralError;

/// AdamW hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamwConfig {
    /// Base learning rate.
    pub lr: f64,
    /// First-moment decay.
    pub beta1: f64,
    /// Second-moment decay.
    pub beta2: f64,
    /// Denominator stabilizer.
    pub eps: f64,
    /// Decoupled weight-decay coefficient.
    pub weight_decay: f64,
    /// Multiplicative learning-rate decay applied once per step.
    pub lr_decay: f64,
}

impl Default for AdamwConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            lr_decay: 1.0,
        }
    }
}

impl AdamwConfig {
    fn validate(&self) -> Result<(), NeuralError> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.lr_decay > 0.0
            && self.lr_decay <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(NeuralError::InvalidSpec(format!(
                "invalid optimizer config: {:?}",
                self
            )))
        }
    }
}

/// Optimizer state: first and second moment vectors mirroring the flat
/// parameter vector, plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    m: Vec<f64>,
    v: Vec<f64>,
    /// Number of steps taken so far.
    pub step: u64,
    /// Hyperparameters, fixed for the lifetime of the state.
    pub cfg: AdamwConfig,
}

impl OptimizerState {
    /// Fresh state for a network with `n_params` parameters.
    pub fn new(n_params: usize, cfg: AdamwConfig) -> Result<Self, NeuralError> {
        cfg.validate()?;
        Ok(Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            cfg,
        })
    }

    /// Learning rate the next step will use.
    pub fn next_lr(&self) -> f64 {
        self.cfg.lr * self.cfg.lr_decay.powi(self.step as i32)
    }
}

/// One AdamW update in place. Gradients must be finite and match the
/// parameter count; on error neither parameters nor state are touched.
pub fn adamw_step(
    params: &mut MlpParams,
    grads: &[f64],
    state: &mut OptimizerState,
) -> Result<(), NeuralError> {
    let n = params.n_params();
    if grads.len() != n || state.m.len() != n {
        return Err(NeuralError::ShapeMismatch(format!(
            "parameter count {} vs gradient count {} vs state count {}",
            n,
            grads.len(),
            state.m.len()
        )));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(NeuralError::NonFiniteGradient {
            step: state.step + 1,
        });
    }
    state.step += 1;
    let t = state.step;
    let cfg = state.cfg;
    let lr_t = cfg.lr * cfg.lr_decay.powi((t - 1) as i32);
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    let data = params.data_mut();
    for i in 0..n {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        data[i] -= lr_t * (m_hat / (v_hat.sqrt() + cfg.eps)) + lr_t * cfg.weight_decay * data[i];
    }
    Ok(())
}
