//! Multilayer perceptron with SiLU hidden activations and an identity output
//! layer, stored as one flat parameter vector so optimizers, checkpoints, and
//! finite-difference checks can treat the network as a plain `&[f64]`.
//!
//! Three evaluation modes are provided: plain forward, reverse-mode gradient
//! of a scalar projection, and a forward-mode directional derivative (JVP)
//! whose computation graph is itself differentiated by [`mlp_jvp_grad`]. The
//! last one is what makes divergence-penalized losses trainable without an
//! autodiff framework.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::NeuralError;

/// Parameters of a fully connected network.
///
/// `widths = [d_in, h_1, ..., h_m, d_out]`; layer `l` applies
/// `z = W_l a + b_l` followed by SiLU for every layer except the last, which
/// is affine. Weights are row-major `(out x in)`, each layer's weight block
/// followed by its bias block, all concatenated into `data`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    widths: Vec<usize>,
    data: Vec<f64>,
}

impl MlpParams {
    /// Number of parameters a network with these widths carries.
    pub fn n_params_for(widths: &[usize]) -> usize {
        widths
            .windows(2)
            .map(|w| w[1] * w[0] + w[1])
            .sum()
    }

    fn validate_widths(widths: &[usize]) -> Result<(), NeuralError> {
        if widths.len() < 2 {
            return Err(NeuralError::InvalidSpec(format!(
                "network needs at least input and output widths, got {:?}",
                widths
            )));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(NeuralError::InvalidSpec(format!(
                "layer widths must be positive, got {:?}",
                widths
            )));
        }
        Ok(())
    }

    /// All-zero network; evaluates to the zero vector for every input.
    pub fn zeros(widths: &[usize]) -> Result<Self, NeuralError> {
        Self::validate_widths(widths)?;
        Ok(Self {
            data: vec![0.0; Self::n_params_for(widths)],
            widths: widths.to_vec(),
        })
    }

    /// Network with weights and biases drawn uniformly from
    /// `+-sqrt(6 / (fan_in + fan_out))` per layer.
    pub fn init(widths: &[usize], rng: &mut ChaCha8Rng) -> Result<Self, NeuralError> {
        Self::validate_widths(widths)?;
        let mut data = Vec::with_capacity(Self::n_params_for(widths));
        for w in widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_out * fan_in + fan_out {
                data.push(rng.gen_range(-bound..bound));
            }
        }
        Ok(Self {
            widths: widths.to_vec(),
            data,
        })
    }

    /// Rebuild a network from its flat parameter vector.
    pub fn from_data(widths: &[usize], data: Vec<f64>) -> Result<Self, NeuralError> {
        Self::validate_widths(widths)?;
        let expected = Self::n_params_for(widths);
        if data.len() != expected {
            return Err(NeuralError::ShapeMismatch(format!(
                "widths {:?} need {} parameters, got {}",
                widths,
                expected,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(NeuralError::InvalidSpec(
                "parameter vector contains non-finite entries".to_string(),
            ));
        }
        Ok(Self {
            widths: widths.to_vec(),
            data,
        })
    }

    /// Layer widths, input first.
    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// Flat parameter vector.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable flat parameter vector.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Total parameter count.
    pub fn n_params(&self) -> usize {
        self.data.len()
    }

    /// Expected input width.
    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    /// Output width.
    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("validated non-empty")
    }

    fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// Offset of layer `l`'s weight block in `data`; biases follow the
    /// `out*in` weights immediately.
    fn layer_offset(&self, l: usize) -> usize {
        self.widths
            .windows(2)
            .take(l)
            .map(|w| w[1] * w[0] + w[1])
            .sum()
    }

    fn weights(&self, l: usize) -> &[f64] {
        let off = self.layer_offset(l);
        let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
        &self.data[off..off + n_out * n_in]
    }

    fn biases(&self, l: usize) -> &[f64] {
        let off = self.layer_offset(l) + self.widths[l + 1] * self.widths[l];
        &self.data[off..off + self.widths[l + 1]]
    }

    /// `z = W_l a + b_l`.
    fn affine(&self, l: usize, a: &[f64]) -> Vec<f64> {
        let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
        let w = self.weights(l);
        let b = self.biases(l);
        let mut z = b.to_vec();
        for r in 0..n_out {
            let row = &w[r * n_in..(r + 1) * n_in];
            let mut acc = 0.0;
            for c in 0..n_in {
                acc += row[c] * a[c];
            }
            z[r] += acc;
        }
        z
    }

    /// `W_l^T lam`, the pullback of the affine map.
    fn affine_transpose(&self, l: usize, lam: &[f64]) -> Vec<f64> {
        let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
        let w = self.weights(l);
        let mut out = vec![0.0; n_in];
        for r in 0..n_out {
            let row = &w[r * n_in..(r + 1) * n_in];
            for c in 0..n_in {
                out[c] += row[c] * lam[r];
            }
        }
        out
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// SiLU activation `x * sigmoid(x)`.
fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// First derivative: `s + x s (1 - s)` with `s = sigmoid(x)`.
fn silu_d1(x: f64) -> f64 {
    let s = sigmoid(x);
    s + x * s * (1.0 - s)
}

/// Second derivative: `s (1 - s) (2 + x (1 - 2 s))`.
fn silu_d2(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s))
}

fn check_input(p: &MlpParams, x: &[f64]) -> Result<(), NeuralError> {
    if x.len() != p.input_width() {
        return Err(NeuralError::WidthMismatch {
            expected: p.input_width(),
            got: x.len(),
        });
    }
    Ok(())
}

/// Evaluate the network at `x`.
pub fn mlp_forward(p: &MlpParams, x: &[f64]) -> Result<Vec<f64>, NeuralError> {
    check_input(p, x)?;
    let n_layers = p.n_layers();
    let mut a = x.to_vec();
    for l in 0..n_layers {
        let z = p.affine(l, &a);
        a = if l + 1 < n_layers {
            z.into_iter().map(silu).collect()
        } else {
            z
        };
    }
    Ok(a)
}

/// Forward pass that keeps per-layer pre-activations and layer inputs for the
/// reverse sweep. `acts[l]` is the input to layer `l`; `zs[l]` its
/// pre-activation output.
fn forward_with_cache(p: &MlpParams, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n_layers = p.n_layers();
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
    let mut zs: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
    let mut a = x.to_vec();
    for l in 0..n_layers {
        let z = p.affine(l, &a);
        acts.push(std::mem::take(&mut a));
        a = if l + 1 < n_layers {
            z.iter().copied().map(silu).collect()
        } else {
            z.clone()
        };
        zs.push(z);
    }
    acts.push(a);
    (acts, zs)
}

/// Gradient of `<upstream, f(x)>` with respect to all parameters and to the
/// input: returns `(param_grads, input_grad)` with `param_grads` laid out
/// exactly like [`MlpParams::data`].
pub fn mlp_grad(
    p: &MlpParams,
    x: &[f64],
    upstream: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), NeuralError> {
    check_input(p, x)?;
    if upstream.len() != p.output_width() {
        return Err(NeuralError::ShapeMismatch(format!(
            "upstream width {} does not match output width {}",
            upstream.len(),
            p.output_width()
        )));
    }
    let n_layers = p.n_layers();
    let (acts, zs) = forward_with_cache(p, x);
    let mut grads = vec![0.0; p.n_params()];
    let mut lam_a = upstream.to_vec();
    for l in (0..n_layers).rev() {
        let lam_z: Vec<f64> = if l + 1 == n_layers {
            lam_a
        } else {
            lam_a
                .iter()
                .zip(zs[l].iter())
                .map(|(&g, &z)| g * silu_d1(z))
                .collect()
        };
        let (n_in, n_out) = (p.widths[l], p.widths[l + 1]);
        let off = p.layer_offset(l);
        let input = &acts[l];
        for r in 0..n_out {
            let gr = lam_z[r];
            let row = &mut grads[off + r * n_in..off + (r + 1) * n_in];
            for c in 0..n_in {
                row[c] += gr * input[c];
            }
        }
        let b_off = off + n_out * n_in;
        grads[b_off..b_off + n_out].copy_from_slice(&lam_z);
        lam_a = p.affine_transpose(l, &lam_z);
    }
    Ok((grads, lam_a))
}

/// Directional derivative: returns `(f(x), J_f(x) tangent)` in one dual
/// forward pass.
pub fn mlp_jvp(
    p: &MlpParams,
    x: &[f64],
    tangent: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), NeuralError> {
    check_input(p, x)?;
    if tangent.len() != x.len() {
        return Err(NeuralError::ShapeMismatch(format!(
            "tangent width {} does not match input width {}",
            tangent.len(),
            x.len()
        )));
    }
    let n_layers = p.n_layers();
    let mut a = x.to_vec();
    let mut da = tangent.to_vec();
    for l in 0..n_layers {
        let z = p.affine(l, &a);
        let dz = {
            let (n_in, n_out) = (p.widths[l], p.widths[l + 1]);
            let w = p.weights(l);
            let mut dz = vec![0.0; n_out];
            for r in 0..n_out {
                let row = &w[r * n_in..(r + 1) * n_in];
                let mut acc = 0.0;
                for c in 0..n_in {
                    acc += row[c] * da[c];
                }
                dz[r] = acc;
            }
            dz
        };
        if l + 1 < n_layers {
            a = z.iter().copied().map(silu).collect();
            da = dz
                .iter()
                .zip(z.iter())
                .map(|(&d, &zv)| d * silu_d1(zv))
                .collect();
        } else {
            a = z;
            da = dz;
        }
    }
    Ok((a, da))
}

/// Gradients of the dual pass itself, plus the primal quantities so callers
/// get value, Jacobian-vector product, and gradients from one sweep.
#[derive(Debug, Clone)]
pub struct JvpGrad {
    /// Network output at `x`.
    pub value: Vec<f64>,
    /// Jacobian-vector product `J_f(x) tangent`.
    pub jv: Vec<f64>,
    /// Gradient with respect to the flat parameter vector.
    pub param_grads: Vec<f64>,
    /// Gradient with respect to the input point `x`.
    pub input_grad: Vec<f64>,
    /// Gradient with respect to the tangent vector.
    pub tangent_grad: Vec<f64>,
}

/// Reverse-mode sweep through the dual (JVP) computation: gradient of
///
/// `S = <upstream_value, f(x)> + <upstream_tangent, J_f(x) tangent>`
///
/// with respect to parameters, input, and tangent. This is what turns
/// divergence estimates into trainable loss terms.
pub fn mlp_jvp_grad(
    p: &MlpParams,
    x: &[f64],
    tangent: &[f64],
    upstream_value: &[f64],
    upstream_tangent: &[f64],
) -> Result<JvpGrad, NeuralError> {
    check_input(p, x)?;
    if tangent.len() != x.len() {
        return Err(NeuralError::ShapeMismatch(format!(
            "tangent width {} does not match input width {}",
            tangent.len(),
            x.len()
        )));
    }
    let d_out = p.output_width();
    if upstream_value.len() != d_out || upstream_tangent.len() != d_out {
        return Err(NeuralError::ShapeMismatch(format!(
            "upstream widths ({}, {}) do not match output width {}",
            upstream_value.len(),
            upstream_tangent.len(),
            d_out
        )));
    }
    let n_layers = p.n_layers();

    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
    let mut dacts: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
    let mut zs: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
    let mut dzs: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
    let mut a = x.to_vec();
    let mut da = tangent.to_vec();
    for l in 0..n_layers {
        let z = p.affine(l, &a);
        let (n_in, n_out) = (p.widths[l], p.widths[l + 1]);
        let w = p.weights(l);
        let mut dz = vec![0.0; n_out];
        for r in 0..n_out {
            let row = &w[r * n_in..(r + 1) * n_in];
            let mut acc = 0.0;
            for c in 0..n_in {
                acc += row[c] * da[c];
            }
            dz[r] = acc;
        }
        acts.push(std::mem::take(&mut a));
        dacts.push(std::mem::take(&mut da));
        if l + 1 < n_layers {
            a = z.iter().copied().map(silu).collect();
            da = dz
                .iter()
                .zip(z.iter())
                .map(|(&d, &zv)| d * silu_d1(zv))
                .collect();
        } else {
            a = z.clone();
            da = dz.clone();
        }
        zs.push(z);
        dzs.push(dz);
    }
    acts.push(a);
    dacts.push(da);
    let value = acts[n_layers].clone();
    let jv = dacts[n_layers].clone();

    let mut grads = vec![0.0; p.n_params()];
    let mut lam_a = upstream_value.to_vec();
    let mut lam_da = upstream_tangent.to_vec();
    for l in (0..n_layers).rev() {
        let (lam_z, lam_dz): (Vec<f64>, Vec<f64>) = if l + 1 == n_layers {
            (lam_a, lam_da)
        } else {
            let mut lz = vec![0.0; p.widths[l + 1]];
            let mut ldz = vec![0.0; p.widths[l + 1]];
            for r in 0..p.widths[l + 1] {
                let z = zs[l][r];
                let d1 = silu_d1(z);
                lz[r] = lam_a[r] * d1 + lam_da[r] * silu_d2(z) * dzs[l][r];
                ldz[r] = lam_da[r] * d1;
            }
            (lz, ldz)
        };
        let (n_in, n_out) = (p.widths[l], p.widths[l + 1]);
        let off = p.layer_offset(l);
        let input = &acts[l];
        let dinput = &dacts[l];
        for r in 0..n_out {
            let gz = lam_z[r];
            let gdz = lam_dz[r];
            let row = &mut grads[off + r * n_in..off + (r + 1) * n_in];
            for c in 0..n_in {
                row[c] += gz * input[c] + gdz * dinput[c];
            }
        }
        let b_off = off + n_out * n_in;
        grads[b_off..b_off + n_out].copy_from_slice(&lam_z);
        lam_a = p.affine_transpose(l, &lam_z);
        lam_da = p.affine_transpose(l, &lam_dz);
    }
    Ok(JvpGrad {
        value,
        jv,
        param_grads: grads,
        input_grad: lam_a,
        tangent_grad: lam_da,
    })
}

fn check_square(p: &MlpParams) -> Result<usize, NeuralError> {
    let d = p.input_width();
    if p.output_width() != d {
        return Err(NeuralError::NonSquareField {
            input: d,
            output: p.output_width(),
        });
    }
    Ok(d)
}

/// Exact divergence `sum_i d f_i / d x_i` via `d` forward-mode passes along
/// the coordinate basis.
pub fn divergence_exact(p: &MlpParams, x: &[f64]) -> Result<f64, NeuralError> {
    let d = check_square(p)?;
    check_input(p, x)?;
    let mut acc = 0.0;
    let mut e = vec![0.0; d];
    for i in 0..d {
        e[i] = 1.0;
        let (_, jv) = mlp_jvp(p, x, &e)?;
        acc += jv[i];
        e[i] = 0.0;
    }
    Ok(acc)
}

/// Draw one Rademacher probe (independent +-1 coordinates).
pub(crate) fn rademacher(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..d)
        .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
        .collect()
}

/// Stochastic divergence estimate: mean over Rademacher probes `v` of
/// `v^T J_f(x) v`. Exact per probe on diagonal fields; unbiased in general.
pub fn divergence_hutchinson(
    p: &MlpParams,
    x: &[f64],
    n_probes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64, NeuralError> {
    let d = check_square(p)?;
    check_input(p, x)?;
    if n_probes == 0 {
        return Err(NeuralError::InvalidSpec(
            "divergence estimate needs at least one probe".to_string(),
        ));
    }
    let mut acc = 0.0;
    for _ in 0..n_probes {
        let v = rademacher(d, rng);
        let (_, jv) = mlp_jvp(p, x, &v)?;
        let mut quad = 0.0;
        for i in 0..d {
            quad += v[i] * jv[i];
        }
        acc += quad;
    }
    Ok(acc / n_probes as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, domain};

    fn seeded(seed: u64, index: u64) -> ChaCha8Rng {
        rng::stream(seed, domain::INIT, index)
    }

    /// Max-norm relative error between a computed and a reference vector.
    fn rel_err(got: &[f64], want: &[f64]) -> f64 {
        let scale = want
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()))
            .max(1e-12);
        got.iter()
            .zip(want)
            .fold(0.0_f64, |m, (g, w)| m.max((g - w).abs()))
            / scale
    }

    fn linear_net(w: &[f64], b: &[f64], n_in: usize, n_out: usize) -> MlpParams {
        let mut data = w.to_vec();
        data.extend_from_slice(b);
        MlpParams::from_data(&[n_in, n_out], data).unwrap()
    }

    #[test]
    fn forward_rejects_width_mismatch() {
        let p = MlpParams::zeros(&[3, 5, 2]).unwrap();
        let err = mlp_forward(&p, &[1.0, 2.0]).unwrap_err();
        assert!(matches!(
            err,
            NeuralError::WidthMismatch {
                expected: 3,
                got: 2
            }
        ));
    }

    #[test]
    fn zero_network_maps_everything_to_zero() {
        let p = MlpParams::zeros(&[4, 7, 3]).unwrap();
        let y = mlp_forward(&p, &[1.0, -2.0, 3.5, 0.25]).unwrap();
        assert_eq!(y, vec![0.0; 3]);
    }

    #[test]
    fn single_affine_layer_is_exact() {
        let p = linear_net(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[0.5, -0.5], 3, 2);
        let y = mlp_forward(&p, &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(y, vec![6.5, 14.5]);
    }

    /// Straight-line reimplementation of the 2-16-2 forward pass, written
    /// independently of the library's layer loop.
    #[test]
    fn forward_matches_unrolled_reference_network() {
        let widths = [2usize, 16, 2];
        let p = MlpParams::init(&widths, &mut seeded(11, 0)).unwrap();
        let x = [0.3, -1.2];

        let d = p.data();
        let (w0, rest) = d.split_at(16 * 2);
        let (b0, rest) = rest.split_at(16);
        let (w1, b1) = rest.split_at(2 * 16);
        let mut hidden = [0.0_f64; 16];
        for r in 0..16 {
            let z = w0[r * 2] * x[0] + w0[r * 2 + 1] * x[1] + b0[r];
            let s = 1.0 / (1.0 + (-z).exp());
            hidden[r] = z * s;
        }
        let mut reference = [b1[0], b1[1]];
        for r in 0..2 {
            for c in 0..16 {
                reference[r] += w1[r * 16 + c] * hidden[c];
            }
        }

        let y = mlp_forward(&p, &x).unwrap();
        assert!((y[0] - reference[0]).abs() < 1e-12);
        assert!((y[1] - reference[1]).abs() < 1e-12);
    }

    fn fd_param_grads(p: &MlpParams, x: &[f64], upstream: &[f64], h: f64) -> Vec<f64> {
        let scalar = |pp: &MlpParams| -> f64 {
            mlp_forward(pp, x)
                .unwrap()
                .iter()
                .zip(upstream)
                .map(|(y, u)| y * u)
                .sum()
        };
        let mut fd = vec![0.0; p.n_params()];
        let mut probe = p.clone();
        for i in 0..p.n_params() {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + h;
            let up = scalar(&probe);
            probe.data_mut()[i] = orig - h;
            let down = scalar(&probe);
            probe.data_mut()[i] = orig;
            fd[i] = (up - down) / (2.0 * h);
        }
        fd
    }

    #[test]
    fn grad_matches_central_differences_on_every_parameter() {
        let p = MlpParams::init(&[4, 8, 4], &mut seeded(21, 0)).unwrap();
        let x = [0.4, -0.8, 1.3, 0.1];
        let upstream = [0.7, -1.1, 0.2, 0.9];
        let (grads, input_grad) = mlp_grad(&p, &x, &upstream).unwrap();
        let fd = fd_param_grads(&p, &x, &upstream, 1e-5);
        assert!(rel_err(&grads, &fd) < 1e-6, "rel err {}", rel_err(&grads, &fd));

        let h = 1e-5;
        let mut fd_input = vec![0.0; 4];
        for i in 0..4 {
            let mut xp = x;
            xp[i] += h;
            let up: f64 = mlp_forward(&p, &xp)
                .unwrap()
                .iter()
                .zip(&upstream)
                .map(|(y, u)| y * u)
                .sum();
            xp[i] = x[i] - h;
            let down: f64 = mlp_forward(&p, &xp)
                .unwrap()
                .iter()
                .zip(&upstream)
                .map(|(y, u)| y * u)
                .sum();
            fd_input[i] = (up - down) / (2.0 * h);
        }
        assert!(rel_err(&input_grad, &fd_input) < 1e-6);
    }

    #[test]
    fn linear_layer_gradient_is_outer_product() {
        let p = linear_net(&[0.0; 6], &[0.0; 2], 3, 2);
        let x = [1.5, -2.0, 0.5];
        let upstream = [2.0, -3.0];
        let (grads, _) = mlp_grad(&p, &x, &upstream).unwrap();
        let expected_w = [
            2.0 * 1.5,
            2.0 * -2.0,
            2.0 * 0.5,
            -3.0 * 1.5,
            -3.0 * -2.0,
            -3.0 * 0.5,
        ];
        assert_eq!(&grads[..6], &expected_w);
        assert_eq!(&grads[6..], &upstream);
    }

    #[test]
    fn identity_network_passes_upstream_through() {
        let p = linear_net(&[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0], 2, 2);
        let upstream = [0.3, -0.7];
        let (_, input_grad) = mlp_grad(&p, &[5.0, 6.0], &upstream).unwrap();
        assert_eq!(input_grad, upstream.to_vec());
    }

    #[test]
    fn jvp_of_linear_map_is_matrix_vector_product() {
        let p = linear_net(&[2.0, 1.0, -1.0, 3.0], &[10.0, -10.0], 2, 2);
        let (_, jv) = mlp_jvp(&p, &[4.0, 4.0], &[1.0, -2.0]).unwrap();
        assert_eq!(jv, vec![2.0 - 2.0, -1.0 - 6.0]);
    }

    #[test]
    fn jvp_with_zero_tangent_is_zero_and_value_matches_forward() {
        let p = MlpParams::init(&[3, 9, 3], &mut seeded(5, 1)).unwrap();
        let x = [0.2, 0.4, -0.6];
        let (value, jv) = mlp_jvp(&p, &x, &[0.0; 3]).unwrap();
        assert_eq!(jv, vec![0.0; 3]);
        assert_eq!(value, mlp_forward(&p, &x).unwrap());
    }

    #[test]
    fn stacked_jvp_reproduces_finite_difference_jacobian() {
        let p = MlpParams::init(&[4, 10, 3], &mut seeded(31, 2)).unwrap();
        let x = [0.1, -0.5, 0.9, 0.3];
        let h = 1e-6;
        let mut jac = vec![0.0; 3 * 4];
        let mut fd = vec![0.0; 3 * 4];
        let mut e = [0.0; 4];
        for c in 0..4 {
            e[c] = 1.0;
            let (_, jv) = mlp_jvp(&p, &x, &e).unwrap();
            e[c] = 0.0;
            let mut xp = x;
            xp[c] += h;
            let up = mlp_forward(&p, &xp).unwrap();
            xp[c] = x[c] - h;
            let down = mlp_forward(&p, &xp).unwrap();
            for r in 0..3 {
                jac[r * 4 + c] = jv[r];
                fd[r * 4 + c] = (up[r] - down[r]) / (2.0 * h);
            }
        }
        assert!(rel_err(&jac, &fd) < 1e-6, "rel err {}", rel_err(&jac, &fd));
    }

    /// The composite scalar the dual-pass reverse sweep differentiates.
    fn jvp_scalar(
        p: &MlpParams,
        x: &[f64],
        tangent: &[f64],
        uv: &[f64],
        ut: &[f64],
    ) -> f64 {
        let (value, jv) = mlp_jvp(p, x, tangent).unwrap();
        value.iter().zip(uv).map(|(a, b)| a * b).sum::<f64>()
            + jv.iter().zip(ut).map(|(a, b)| a * b).sum::<f64>()
    }

    #[test]
    fn jvp_grad_matches_central_differences_on_composite_scalar() {
        let p = MlpParams::init(&[4, 8, 4], &mut seeded(41, 3)).unwrap();
        let x = [0.6, -0.2, 0.8, -1.0];
        let tangent = [1.0, -1.0, 0.5, 2.0];
        let uv = [0.3, 0.9, -0.4, 0.1];
        let ut = [-0.8, 0.2, 1.4, -0.6];
        let g = mlp_jvp_grad(&p, &x, &tangent, &uv, &ut).unwrap();

        let h = 1e-5;
        let mut probe = p.clone();
        let mut fd = vec![0.0; p.n_params()];
        for i in 0..p.n_params() {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + h;
            let up = jvp_scalar(&probe, &x, &tangent, &uv, &ut);
            probe.data_mut()[i] = orig - h;
            let down = jvp_scalar(&probe, &x, &tangent, &uv, &ut);
            probe.data_mut()[i] = orig;
            fd[i] = (up - down) / (2.0 * h);
        }
        assert!(
            rel_err(&g.param_grads, &fd) < 1e-6,
            "rel err {}",
            rel_err(&g.param_grads, &fd)
        );

        let mut fd_x = vec![0.0; 4];
        let mut fd_t = vec![0.0; 4];
        for i in 0..4 {
            let mut xp = x;
            xp[i] += h;
            let up = jvp_scalar(&p, &xp, &tangent, &uv, &ut);
            xp[i] = x[i] - h;
            let down = jvp_scalar(&p, &xp, &tangent, &uv, &ut);
            fd_x[i] = (up - down) / (2.0 * h);

            let mut tp = tangent;
            tp[i] += h;
            let up = jvp_scalar(&p, &x, &tp, &uv, &ut);
            tp[i] = tangent[i] - h;
            let down = jvp_scalar(&p, &x, &tp, &uv, &ut);
            fd_t[i] = (up - down) / (2.0 * h);
        }
        assert!(rel_err(&g.input_grad, &fd_x) < 1e-6);
        assert!(rel_err(&g.tangent_grad, &fd_t) < 1e-6);
    }

    #[test]
    fn jvp_grad_with_inert_tangent_reduces_to_plain_gradient() {
        let p = MlpParams::init(&[3, 6, 3], &mut seeded(51, 4)).unwrap();
        let x = [0.2, -0.9, 0.5];
        let upstream = [1.0, 0.5, -0.25];
        let (grads, input_grad) = mlp_grad(&p, &x, &upstream).unwrap();
        let g = mlp_jvp_grad(&p, &x, &[0.0; 3], &upstream, &[0.0; 3]).unwrap();
        assert!(rel_err(&g.param_grads, &grads) < 1e-14);
        assert!(rel_err(&g.input_grad, &input_grad) < 1e-14);
    }

    #[test]
    fn exact_divergence_of_diagonal_field_is_trace() {
        let p = linear_net(&[2.0, 0.0, 0.0, 3.0], &[1.0, -1.0], 2, 2);
        let div = divergence_exact(&p, &[7.0, -4.0]).unwrap();
        assert_eq!(div, 5.0);
    }

    /// Divergence of the analytic field (sin x1, cos x2) at the origin via
    /// the same basis-probe formula the exact estimator uses.
    #[test]
    fn basis_probe_formula_recovers_analytic_divergence()
    {
        let jvp_field = |x: [f64; 2], v: [f64; 2]| [x[0].cos() * v[0], -x[1].sin() * v[1]];
        let x = [0.0, 0.0];
        let div = jvp_field(x, [1.0, 0.0])[0] + jvp_field(x, [0.0, 1.0])[1];
        assert_eq!(div, 1.0);
    }

    #[test]
    fn exact_divergence_rejects_non_square_field() {
        let p = MlpParams::zeros(&[3, 5, 2]).unwrap();
        let err = divergence_exact(&p, &[0.0; 3]).unwrap_err();
        assert!(matches!(
            err,
            NeuralError::NonSquareField {
                input: 3,
                output: 2
            }
        ));
    }

    #[test]
    fn exact_divergence_matches_finite_differences_on_random_network() {
        let p = MlpParams::init(&[6, 14, 6], &mut seeded(61, 5)).unwrap();
        let x = [0.3, -0.1, 0.7, -0.5, 0.2, 0.9];
        let div = divergence_exact(&p, &x).unwrap();
        let h = 1e-6;
        let mut fd = 0.0;
        for i in 0..6 {
            let mut xp = x;
            xp[i] += h;
            let up = mlp_forward(&p, &xp).unwrap()[i];
            xp[i] = x[i] - h;
            let down = mlp_forward(&p, &xp).unwrap()[i];
            fd += (up - down) / (2.0 * h);
        }
        assert!(
            (div - fd).abs() / fd.abs().max(1e-12) < 1e-6,
            "exact {} fd {}",
            div,
            fd
        );
    }

    #[test]
    fn hutchinson_is_exact_per_probe_on_diagonal_fields() {
        let p = linear_net(&[2.0, 0.0, 0.0, 3.0], &[0.5, 0.5], 2, 2);
        for probe_seed in 0..20 {
            let mut rng = seeded(70, probe_seed);
            let est = divergence_hutchinson(&p, &[1.0, 2.0], 1, &mut rng).unwrap();
            assert_eq!(est, 5.0);
        }
    }

    #[test]
    fn complete_probe_set_mean_recovers_trace_of_full_linear_field() {
        let p = linear_net(&[2.0, 1.0, -1.0, 3.0], &[0.0, 0.0], 2, 2);
        let x = [0.4, -0.2];
        let mut acc = 0.0;
        for pattern in 0..4u32 {
            let v = [
                if pattern & 1 == 0 { 1.0 } else { -1.0 },
                if pattern & 2 == 0 { 1.0 } else { -1.0 },
            ];
            let (_, jv) = mlp_jvp(&p, &x, &v).unwrap();
            acc += v[0] * jv[0] + v[1] * jv[1];
        }
        assert_eq!(acc / 4.0, 5.0);
    }

    #[test]
    fn complete_probe_set_equals_exact_divergence_on_nonlinear_fields() {
        for (widths, seed) in [(vec![4usize, 8, 4], 81u64), (vec![8, 12, 8], 82)] {
            let p = MlpParams::init(&widths, &mut seeded(seed, 0)).unwrap();
            let d = widths[0];
            let x: Vec<f64> = (0..d).map(|i| 0.1 * (i as f64) - 0.3).collect();
            let exact = divergence_exact(&p, &x).unwrap();
            let mut acc = 0.0;
            for pattern in 0..(1u32 << d) {
                let v: Vec<f64> = (0..d)
                    .map(|i| if pattern >> i & 1 == 0 { 1.0 } else { -1.0 })
                    .collect();
                let (_, jv) = mlp_jvp(&p, &x, &v).unwrap();
                let quad: f64 = v.iter().zip(&jv).map(|(a, b)| a * b).sum();
                acc += quad;
            }
            let mean = acc / (1u64 << d) as f64;
            assert!(
                (mean - exact).abs() < 1e-10,
                "width {}: mean {} exact {}",
                d,
                mean,
                exact
            );
        }
    }

    /// Estimator concentration on a field whose trace dominates its
    /// off-diagonal mass, so the relative-error criterion is meaningful.
    #[test]
    fn hutchinson_with_1024_probes_concentrates_on_dominant_trace() {
        let d = 6;
        let mut passes = 0;
        for trial in 0..100u64 {
            let mut rng = seeded(90, trial);
            let mut w = vec![0.0; d * d];
            for r in 0..d {
                for c in 0..d {
                    w[r * d + c] = if r == c {
                        3.0 + 0.3 * rng.gen_range(-1.0..1.0)
                    } else {
                        0.2 * rng.gen_range(-1.0..1.0)
                    };
                }
            }
            let p = linear_net(&w, &vec![0.0; d], d, d);
            let x = vec![0.0; d];
            let exact = divergence_exact(&p, &x).unwrap();
            let mut probe_rng = seeded(91, trial);
            let est = divergence_hutchinson(&p, &x, 1024, &mut probe_rng).unwrap();
            if ((est - exact) / exact).abs() < 0.05 {
                passes += 1;
            }
        }
        assert!(passes >= 95, "only {} of 100 trials within 5%", passes);
    }

    #[test]
    fn hutchinson_rejects_zero_probes() {
        let p = MlpParams::zeros(&[2, 2]).unwrap();
        let mut rng = seeded(95, 0);
        assert!(divergence_hutchinson(&p, &[0.0, 0.0], 0, &mut rng).is_err());
    }

    #[test]
    fn init_respects_fan_based_bound_and_is_seed_deterministic() {
        let widths = [5usize, 11, 3];
        let a = MlpParams::init(&widths, &mut seeded(101, 0)).unwrap();
        let b = MlpParams::init(&widths, &mut seeded(101, 0)).unwrap();
        assert_eq!(a.data(), b.data());
        let bound0 = (6.0 / 16.0_f64).sqrt();
        let bound1 = (6.0 / 14.0_f64).sqrt();
        let split = 11 * 5 + 11;
        assert!(a.data()[..split].iter().all(|v| v.abs() < bound0));
        assert!(a.data()[split..].iter().all(|v| v.abs() < bound1));
        let c = MlpParams::init(&widths, &mut seeded(102, 0)).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn from_data_validates_length_and_finiteness() {
        assert!(MlpParams::from_data(&[2, 2], vec![0.0; 5]).is_err());
        assert!(MlpParams::from_data(&[2, 2], vec![f64::NAN; 6]).is_err());
        assert!(MlpParams::from_data(&[2, 2], vec![0.0; 6]).is_ok());
        assert!(MlpParams::zeros(&[4]).is_err());
        assert!(MlpParams::zeros(&[4, 0, 2]).is_err());
    }
}
