//! Discrete entropic optimal transport with exact and perturbed iterative
//! proportional fitting.
//!
//! The solver alternates log-space half-steps that each match one marginal of
//! the coupling exactly. Before every half-step the target marginal can be
//! replaced by a smoothly tilted copy (`perturb_marginal`), which models
//! projection error of magnitude `eps` per iteration. Convergence traces
//! record marginal KL divergences, the Gibbs objective, and the residuals of
//! the dual system, and `diagnose_trace` checks the summability bound, the
//! interleaved monotonicity property, and the `A/k + B` rate shape.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

/// Errors for marginal construction, projections, and divergences.
#[derive(Debug, Error)]
pub enum EotError {
    #[error("invalid marginal: {0}")]
    InvalidMarginal(String),
    #[error("invalid coupling: {0}")]
    InvalidCoupling(String),
    #[error("invalid potentials: {0}")]
    InvalidPotentials(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("degenerate cost: {0}")]
    DegenerateCost(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("absolute continuity violated at index {index}: q is zero where p is positive")]
    AbsoluteContinuity { index: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Atoms in R^d with strictly positive weights summing to 1.
///
/// Zero-weight atoms are dropped at construction; weights below 1e-300 are
/// rejected because downstream log-space arithmetic cannot represent them.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMarginal {
    support: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl DiscreteMarginal {
    pub fn new(support: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self, EotError> {
        if support.len() != weights.len() {
            return Err(EotError::DimensionMismatch(format!(
                "{} support points vs {} weights",
                support.len(),
                weights.len()
            )));
        }
        let mut kept_support = Vec::with_capacity(support.len());
        let mut kept_weights = Vec::with_capacity(weights.len());
        for (x, &w) in support.into_iter().zip(&weights) {
            if w == 0.0 {
                continue;
            }
            if !w.is_finite() || w < 0.0 {
                return Err(EotError::InvalidMarginal(format!("weight {w} is not a finite nonnegative real")));
            }
            if w < 1e-300 {
                return Err(EotError::InvalidMarginal(format!("weight {w} below the 1e-300 representability floor")));
            }
            kept_support.push(x);
            kept_weights.push(w);
        }
        if kept_weights.is_empty() {
            return Err(EotError::InvalidMarginal("no atoms with positive weight".into()));
        }
        let d = kept_support[0].len();
        if kept_support.iter().any(|x| x.len() != d) {
            return Err(EotError::DimensionMismatch("support points of unequal dimension".into()));
        }
        let total: f64 = kept_weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(EotError::InvalidMarginal(format!("weights sum to {total}, expected 1 within 1e-12")));
        }
        Ok(Self { support: kept_support, weights: kept_weights })
    }

    pub fn support(&self) -> &[Vec<f64>] {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.support[0].len()
    }
}

/// Draws `n` atoms uniformly in the unit box of R^d with weights sampled
/// from U(0.5, 1.5) and normalized. Instance helper for solver sweeps.
pub fn sample_marginal(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Result<DiscreteMarginal, EotError> {
    if n == 0 || d == 0 {
        return Err(EotError::InvalidParameter(format!("need n >= 1 atoms and d >= 1, got n={n}, d={d}")));
    }
    let support: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen::<f64>()).collect()).collect();
    let raw: Vec<f64> = (0..n).map(|_| 0.5 + rng.gen::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    DiscreteMarginal::new(support, raw.iter().map(|w| w / total).collect())
}

/// Seeded planar benchmark instance: two `n`-atom marginals drawn from one
/// stream of `seed` and the variance-exploding entropic transport cost at
/// regularization `reg_eps`. The same `(n, reg_eps, seed)` triple always
/// yields the same instance, so solver studies and their oracles agree on
/// what they solve.
pub fn benchmark_instance(
    n: usize,
    reg_eps: f64,
    seed: u64,
) -> Result<(DiscreteMarginal, DiscreteMarginal, Vec<Vec<f64>>), EotError> {
    let mut rng = crate::rng::stream(seed, crate::rng::domain::INSTANCE, 0);
    let mu = sample_marginal(n, 2, &mut rng)?;
    let nu = sample_marginal(n, 2, &mut rng)?;
    let spec = crate::sde::SdeSpec::ve(0.05, 2.5, 1)
        .map_err(|e| EotError::InvalidParameter(e.to_string()))?;
    let cost = crate::sde::eot_cost(&spec, reg_eps, mu.support(), nu.support())
        .map_err(|e| EotError::InvalidParameter(e.to_string()))?;
    Ok((mu, nu, cost))
}

/// Dual potentials (phi over rows, psi over columns). Entries must be finite.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialPair {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
}

impl PotentialPair {
    pub fn new(phi: Vec<f64>, psi: Vec<f64>) -> Result<Self, EotError> {
        if phi.iter().chain(&psi).any(|v| !v.is_finite()) {
            return Err(EotError::InvalidPotentials("non-finite entry".into()));
        }
        Ok(Self { phi, psi })
    }
}

/// Nonnegative n x m transport plan stored row-major.
///
/// `new` enforces unit mass within 1e-10. Plans built from potentials via
/// [`coupling_from_potentials`] are deliberately not renormalized: their mass
/// equals 1 only when the potentials solve the dual system, which callers can
/// check through [`CouplingMatrix::total_mass`].
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    weights: Vec<f64>,
    n_rows: usize,
    n_cols: usize,
}

impl CouplingMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, EotError> {
        let c = Self::from_rows_unchecked(rows)?;
        if (c.total_mass() - 1.0).abs() > 1e-10 {
            return Err(EotError::InvalidCoupling(format!(
                "mass {} differs from 1 by more than 1e-10",
                c.total_mass()
            )));
        }
        Ok(c)
    }

    fn from_rows_unchecked(rows: Vec<Vec<f64>>) -> Result<Self, EotError> {
        let n_rows = rows.len();
        if n_rows == 0 || rows[0].is_empty() {
            return Err(EotError::InvalidCoupling("empty matrix".into()));
        }
        let n_cols = rows[0].len();
        let mut weights = Vec::with_capacity(n_rows * n_cols);
        for row in rows {
            if row.len() != n_cols {
                return Err(EotError::DimensionMismatch("ragged coupling rows".into()));
            }
            for w in row {
                if !w.is_finite() || w < 0.0 {
                    return Err(EotError::InvalidCoupling(format!("entry {w} is not a finite nonnegative real")));
                }
                weights.push(w);
            }
        }
        Ok(Self { weights, n_rows, n_cols })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n_cols + j]
    }

    /// Row-major flat view of the entries.
    pub fn entries(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Row sums (the first marginal of the plan).
    pub fn row_marginal(&self) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.weights[i * self.n_cols..(i + 1) * self.n_cols].iter().sum()).collect()
    }

    /// Column sums (the second marginal of the plan).
    pub fn col_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_cols];
        for i in 0..self.n_rows {
            for (j, o) in out.iter_mut().enumerate() {
                *o += self.weights[i * self.n_cols + j];
            }
        }
        out
    }
}

/// One iteration's observables: marginal KLs against the true targets, the
/// Gibbs objective of the even coupling, dual-system residuals, and the two
/// chain increments consumed by the summability diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub k: usize,
    /// KL(first marginal of the even coupling | true mu).
    pub kl_mu: f64,
    /// KL(true nu | second marginal of the odd coupling).
    pub kl_nu: f64,
    /// KL(even coupling | Gibbs coupling).
    pub objective: f64,
    /// Max column residual of the dual system against the true marginals.
    pub r1: f64,
    /// Max row residual of the dual system against the true marginals.
    pub r2: f64,
    /// KL(odd coupling of this iteration | even coupling of the previous one); 0 at k=0.
    pub kl_step_odd: f64,
    /// KL(even coupling | odd coupling), both of this iteration.
    pub kl_step_even: f64,
}

/// Per-iteration records of a solver run, in iteration order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTrace {
    pub records: Vec<TraceRecord>,
}

impl ConvergenceTrace {
    /// CSV serialization: header `k,kl_mu,kl_nu,objective,r1,r2`, one row per
    /// iteration, 16 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,kl_mu,kl_nu,objective,r1,r2\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{:.15e},{:.15e},{:.15e},{:.15e},{:.15e}\n",
                r.k, r.kl_mu, r.kl_nu, r.objective, r.r1, r.r2
            ));
        }
        out
    }
}

fn logsumexp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if m == f64::INFINITY {
        return f64::INFINITY;
    }
    m + terms.iter().map(|&t| (t - m).exp()).sum::<f64>().ln()
}

/// Requires a rectangular n x m matrix whose entries are either finite or
/// +inf (a forbidden transition). NaN and -inf are rejected.
fn validate_cost(cost: &[Vec<f64>], n: usize, m: usize) -> Result<(), EotError> {
    if cost.len() != n || cost.iter().any(|row| row.len() != m) {
        return Err(EotError::DimensionMismatch(format!("cost matrix is not {n} x {m}")));
    }
    for row in cost {
        for &c in row {
            if c.is_nan() {
                return Err(EotError::Domain("NaN cost entry".into()));
            }
            if c == f64::NEG_INFINITY {
                return Err(EotError::Domain("-inf cost entry".into()));
            }
        }
    }
    Ok(())
}

fn validate_finite(v: &[f64], what: &str) -> Result<(), EotError> {
    if v.iter().any(|x| x.is_nan()) {
        return Err(EotError::Domain(format!("NaN entry in {what}")));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(EotError::InvalidPotentials(format!("non-finite entry in {what}")));
    }
    Ok(())
}

/// Normalized plan proportional to `exp(-c_ij) mu_i nu_j`, together with the
/// log of its normalizing constant.
pub fn gibbs_coupling(
    cost: &[Vec<f64>],
    mu: &DiscreteMarginal,
    nu: &DiscreteMarginal,
) -> Result<(CouplingMatrix, f64), EotError> {
    let (n, m) = (mu.len(), nu.len());
    validate_cost(cost, n, m)?;
    for (i, row) in cost.iter().enumerate() {
        if row.iter().all(|&c| c == f64::INFINITY) {
            return Err(EotError::DegenerateCost(format!("row {i} forbids every transition")));
        }
    }
    for j in 0..m {
        if cost.iter().all(|row| row[j] == f64::INFINITY) {
            return Err(EotError::DegenerateCost(format!("column {j} forbids every transition")));
        }
    }
    let log_terms: Vec<f64> = cost
        .iter()
        .zip(mu.weights())
        .flat_map(|(row, &wi)| {
            row.iter().zip(nu.weights()).map(move |(&c, &wj)| -c + wi.ln() + wj.ln())
        })
        .collect();
    let log_z = logsumexp(&log_terms);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..m).map(|j| (log_terms[i * m + j] - log_z).exp()).collect())
        .collect();
    Ok((CouplingMatrix::new(rows)?, log_z))
}

/// Column half-step: `psi_j = -logsumexp_i(phi_i - c_ij + log mu_i)`.
pub fn ipf_psi_step(phi: &[f64], cost: &[Vec<f64>], mu: &DiscreteMarginal) -> Result<Vec<f64>, EotError> {
    let n = mu.len();
    if phi.len() != n {
        return Err(EotError::DimensionMismatch(format!("phi has {} entries, mu has {n}", phi.len())));
    }
    validate_finite(phi, "phi")?;
    let m = cost.first().map_or(0, Vec::len);
    validate_cost(cost, n, m)?;
    let mut psi = Vec::with_capacity(m);
    for j in 0..m {
        let terms: Vec<f64> = (0..n).map(|i| phi[i] - cost[i][j] + mu.weights()[i].ln()).collect();
        let v = -logsumexp(&terms);
        if !v.is_finite() {
            return Err(EotError::DegenerateCost(format!("column {j} admits no transition of finite cost")));
        }
        psi.push(v);
    }
    Ok(psi)
}

/// Row half-step: `phi_i = -logsumexp_j(psi_j - c_ij + log nu_j)`.
pub fn ipf_phi_step(psi: &[f64], cost: &[Vec<f64>], nu: &DiscreteMarginal) -> Result<Vec<f64>, EotError> {
    let m = nu.len();
    if psi.len() != m {
        return Err(EotError::DimensionMismatch(format!("psi has {} entries, nu has {m}", psi.len())));
    }
    validate_finite(psi, "psi")?;
    let n = cost.len();
    validate_cost(cost, n, m)?;
    let mut phi = Vec::with_capacity(n);
    for (i, row) in cost.iter().enumerate() {
        let terms: Vec<f64> = (0..m).map(|j| psi[j] - row[j] + nu.weights()[j].ln()).collect();
        let v = -logsumexp(&terms);
        if !v.is_finite() {
            return Err(EotError::DegenerateCost(format!("row {i} admits no transition of finite cost")));
        }
        phi.push(v);
    }
    Ok(phi)
}

/// Tilts the log-weights by `eps * sin(<a, x> + b)` with `a` uniform on the
/// unit sphere and `b` uniform in [0, 2 pi), then renormalizes. The tilt is
/// bounded by `eps` in sup norm, a discrete surrogate for a score field known
/// to accuracy `eps`. With `eps = 0` the marginal is returned unchanged and
/// the generator is not consumed.
pub fn perturb_marginal(m: &DiscreteMarginal, eps: f64, rng: &mut ChaCha8Rng) -> Result<DiscreteMarginal, EotError> {
    if !(eps >= 0.0) {
        return Err(EotError::InvalidParameter(format!("eps must be nonnegative, got {eps}")));
    }
    if eps == 0.0 {
        return Ok(m.clone());
    }
    let d = m.dim();
    let mut a: Vec<f64>;
    loop {
        a = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            a.iter_mut().for_each(|v| *v /= norm);
            break;
        }
    }
    let b = rng.gen::<f64>() * 2.0 * std::f64::consts::PI;
    let tilted: Vec<f64> = m
        .support()
        .iter()
        .zip(m.weights())
        .map(|(x, &w)| {
            let phase: f64 = a.iter().zip(x).map(|(ai, xi)| ai * xi).sum::<f64>() + b;
            w.ln() + eps * phase.sin()
        })
        .collect();
    let log_z = logsumexp(&tilted);
    DiscreteMarginal::new(m.support().to_vec(), tilted.iter().map(|lw| (lw - log_z).exp()).collect())
}

/// Plan `pi_ij = exp(phi_i + psi_j - c_ij) mu_i nu_j` with no renormalization;
/// unit mass emerges exactly when the potentials solve the dual system.
pub fn coupling_from_potentials(
    pp: &PotentialPair,
    cost: &[Vec<f64>],
    mu: &DiscreteMarginal,
    nu: &DiscreteMarginal,
) -> Result<CouplingMatrix, EotError> {
    let (n, m) = (mu.len(), nu.len());
    if pp.phi.len() != n || pp.psi.len() != m {
        return Err(EotError::DimensionMismatch(format!(
            "potentials are ({}, {}), marginals are ({n}, {m})",
            pp.phi.len(),
            pp.psi.len()
        )));
    }
    validate_finite(&pp.phi, "phi")?;
    validate_finite(&pp.psi, "psi")?;
    validate_cost(cost, n, m)?;
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..m)
                .map(|j| (pp.phi[i] + pp.psi[j] - cost[i][j] + mu.weights()[i].ln() + nu.weights()[j].ln()).exp())
                .collect()
        })
        .collect();
    CouplingMatrix::from_rows_unchecked(rows)
}

/// Max deviations of the dual system from feasibility:
/// `r1 = max_j |sum_i exp(phi_i + psi_j - c_ij) mu_i - 1|` and
/// `r2 = max_i |sum_j exp(phi_i + psi_j - c_ij) nu_j - 1|`.
pub fn schrodinger_residuals(
    pp: &PotentialPair,
    cost: &[Vec<f64>],
    mu: &DiscreteMarginal,
    nu: &DiscreteMarginal,
) -> Result<(f64, f64), EotError> {
    let (n, m) = (mu.len(), nu.len());
    if pp.phi.len() != n || pp.psi.len() != m {
        return Err(EotError::DimensionMismatch(format!(
            "potentials are ({}, {}), marginals are ({n}, {m})",
            pp.phi.len(),
            pp.psi.len()
        )));
    }
    validate_cost(cost, n, m)?;
    let mut r1 = 0.0f64;
    for j in 0..m {
        let terms: Vec<f64> = (0..n).map(|i| pp.phi[i] + pp.psi[j] - cost[i][j] + mu.weights()[i].ln()).collect();
        r1 = r1.max((logsumexp(&terms).exp() - 1.0).abs());
    }
    let mut r2 = 0.0f64;
    for i in 0..n {
        let terms: Vec<f64> = (0..m).map(|j| pp.phi[i] + pp.psi[j] - cost[i][j] + nu.weights()[j].ln()).collect();
        r2 = r2.max((logsumexp(&terms).exp() - 1.0).abs());
    }
    Ok((r1, r2))
}

/// `sum_i p_i log(p_i / q_i)` with `0 log 0 = 0`; errors where `q_i = 0` but
/// `p_i > 0`.
pub fn kl_weights(p: &[f64], q: &[f64]) -> Result<f64, EotError> {
    if p.len() != q.len() {
        return Err(EotError::DimensionMismatch(format!("{} vs {} entries", p.len(), q.len())));
    }
    let mut total = 0.0;
    for (index, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(EotError::AbsoluteContinuity { index });
        }
        total += pi * (pi / qi).ln();
    }
    Ok(total)
}

/// KL divergence between two marginals sharing a support.
pub fn kl_marginals(p: &DiscreteMarginal, q: &DiscreteMarginal) -> Result<f64, EotError> {
    kl_weights(p.weights(), q.weights())
}

/// KL divergence between two plans of the same shape.
pub fn kl_couplings(p: &CouplingMatrix, q: &CouplingMatrix) -> Result<f64, EotError> {
    if p.n_rows() != q.n_rows() || p.n_cols() != q.n_cols() {
        return Err(EotError::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            p.n_rows(),
            p.n_cols(),
            q.n_rows(),
            q.n_cols()
        )));
    }
    kl_weights(p.entries(), q.entries())
}

/// The two terms of the entropic transport objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EotObjective {
    /// `sum_ij c_ij pi_ij`.
    pub transport: f64,
    /// `KL(pi | mu (x) nu)`.
    pub entropy_reg: f64,
}

impl EotObjective {
    pub fn total(&self) -> f64 {
        self.transport + self.entropy_reg
    }
}

/// Splits the entropic objective of a plan into its transport and entropy
/// terms. For any unit-mass plan, `KL(pi | G) = total() + log Z` with
/// `(G, log Z)` from [`gibbs_coupling`].
pub fn eot_objective(
    pi: &CouplingMatrix,
    cost: &[Vec<f64>],
    mu: &DiscreteMarginal,
    nu: &DiscreteMarginal,
) -> Result<EotObjective, EotError> {
    let (n, m) = (mu.len(), nu.len());
    if pi.n_rows() != n || pi.n_cols() != m {
        return Err(EotError::DimensionMismatch(format!(
            "plan is {}x{}, marginals are ({n}, {m})",
            pi.n_rows(),
            pi.n_cols()
        )));
    }
    validate_cost(cost, n, m)?;
    let mut transport = 0.0;
    let mut product = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            let w = pi.get(i, j);
            if w > 0.0 {
                transport += cost[i][j] * w;
            }
            product.push(mu.weights()[i] * nu.weights()[j]);
        }
    }
    let entropy_reg = kl_weights(pi.entries(), &product)?;
    Ok(EotObjective { transport, entropy_reg })
}

/// Runs `n_iters` full iterations of approximate iterative proportional
/// fitting from zero initial row potentials. Before each half-step the target
/// marginal is replaced by a fresh `eps`-tilt of the true one; `eps = 0`
/// recovers exact projections, for which the post-step marginals match the
/// targets exactly. One [`TraceRecord`] is emitted per iteration.
pub fn run_aipf(
    mu_star: &DiscreteMarginal,
    nu_star: &DiscreteMarginal,
    cost: &[Vec<f64>],
    eps: f64,
    n_iters: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ConvergenceTrace, EotError> {
    run_aipf_with_init(mu_star, nu_star, cost, eps, n_iters, vec![0.0; mu_star.len()], rng)
}

/// [`run_aipf`] with caller-chosen initial row potentials. Traces are
/// invariant to constant shifts of the initialization (the additive gauge of
/// the dual system).
pub fn run_aipf_with_init(
    mu_star: &DiscreteMarginal,
    nu_star: &DiscreteMarginal,
    cost: &[Vec<f64>],
    eps: f64,
    n_iters: usize,
    phi0: Vec<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<ConvergenceTrace, EotError> {
    if n_iters == 0 {
        return Err(EotError::InvalidParameter("n_iters must be >= 1".into()));
    }
    let (gibbs, _log_z) = gibbs_coupling(cost, mu_star, nu_star)?;
    let mut phi = phi0;
    let mut psi_prev: Option<Vec<f64>> = None;
    let mut nu_prev: Option<DiscreteMarginal> = None;
    let mut even_prev: Option<CouplingMatrix> = None;
    let mut records = Vec::with_capacity(n_iters);
    for k in 0..n_iters {
        let mu_k = perturb_marginal(mu_star, eps, rng)?;
        let psi = ipf_psi_step(&phi, cost, &mu_k)?;
        let pi_odd = match (&psi_prev, &nu_prev) {
            (Some(psi_prev), Some(nu_prev)) => coupling_from_potentials(
                &PotentialPair { phi: phi.clone(), psi: psi_prev.clone() },
                cost,
                &mu_k,
                nu_prev,
            )?,
            _ => gibbs.clone(),
        };
        let kl_step_odd = match &even_prev {
            Some(prev) => kl_couplings(&pi_odd, prev)?.max(0.0),
            None => 0.0,
        };
        let nu_k = perturb_marginal(nu_star, eps, rng)?;
        let pp = PotentialPair { phi: phi.clone(), psi: psi.clone() };
        let pi_even = coupling_from_potentials(&pp, cost, &mu_k, &nu_k)?;
        let kl_step_even = kl_couplings(&pi_even, &pi_odd)?.max(0.0);
        let kl_mu = kl_weights(&pi_even.row_marginal(), mu_star.weights())?.max(0.0);
        let kl_nu = kl_weights(nu_star.weights(), &pi_odd.col_marginal())?.max(0.0);
        let objective = kl_couplings(&pi_even, &gibbs)?.max(0.0);
        let (r1, r2) = schrodinger_residuals(&pp, cost, mu_star, nu_star)?;
        records.push(TraceRecord { k, kl_mu, kl_nu, objective, r1, r2, kl_step_odd, kl_step_even });
        phi = ipf_phi_step(&psi, cost, &nu_k)?;
        psi_prev = Some(psi);
        nu_prev = Some(nu_k);
        even_prev = Some(pi_even);
    }
    Ok(ConvergenceTrace { records })
}

/// Options for [`diagnose_trace`]: the slack multiplier applied per unit of
/// `eps`, and an externally computed KL(optimal plan | Gibbs) to use as the
/// summability constant (the final traced objective is used when absent).
#[derive(Debug, Clone, Serialize)]
pub struct DiagnoseOptions {
    pub slack: f64,
    pub kl_pi_star_g: Option<f64>,
}

impl Default for DiagnoseOptions {
    fn default() -> Self {
        Self { slack: 10.0, kl_pi_star_g: None }
    }
}

/// Summability, monotonicity, and rate-shape diagnostics of one trace.
#[derive(Debug, Clone, Serialize)]
pub struct TraceDiagnostics {
    /// `partial_sums[K]` accumulates the chain increments of records 1..=K.
    pub partial_sums: Vec<f64>,
    /// Bound on the final partial sum: constant plus per-half-step slack.
    pub bound_constant: f64,
    /// Whether every partial sum sits below its own bound.
    pub bound_satisfied: bool,
    /// Steps of the interleaved marginal-KL chain that rise more than
    /// `slack * eps` (plus a 1e-14 float guard).
    pub monotonicity_violations: usize,
    /// Fitted `A` of `kl_mu ~ A/k + B` over records k >= 1.
    pub rate_a: f64,
    /// Fitted `B`, clipped to 0 from below.
    pub rate_b: f64,
}

/// Checks a trace against the convergence theory: the chain increments must
/// stay summable below a fixed constant (up to `O(n eps)` slack), the
/// interleaved marginal KLs must be approximately nonincreasing, and the
/// marginal KL decay should fit `A/k + B` with `B` the perturbation floor.
pub fn diagnose_trace(trace: &ConvergenceTrace, eps: f64, opts: &DiagnoseOptions) -> Result<TraceDiagnostics, EotError> {
    if trace.records.is_empty() {
        return Err(EotError::InvalidParameter("trace has no records".into()));
    }
    if !(eps >= 0.0) {
        return Err(EotError::InvalidParameter(format!("eps must be nonnegative, got {eps}")));
    }
    let n = trace.records.len();
    let c_star = opts.kl_pi_star_g.unwrap_or(trace.records[n - 1].objective);
    let objective0 = trace.records[0].objective;

    let mut partial_sums = Vec::with_capacity(n);
    let mut running = 0.0;
    let mut bound_satisfied = true;
    for (idx, r) in trace.records.iter().enumerate() {
        if idx >= 1 {
            running += r.kl_step_odd + r.kl_step_even;
        }
        partial_sums.push(running);
        let bound = c_star - objective0 + opts.slack * eps * (2 * idx) as f64 + 1e-8;
        if running > bound {
            bound_satisfied = false;
        }
    }
    let bound_constant = c_star - objective0 + opts.slack * eps * (2 * (n - 1)) as f64 + 1e-8;

    let mut chain = Vec::with_capacity(2 * n);
    chain.push(trace.records[0].kl_mu);
    for r in &trace.records[1..] {
        chain.push(r.kl_nu);
        chain.push(r.kl_mu);
    }
    let monotonicity_violations = chain
        .windows(2)
        .filter(|w| w[1] > w[0] + opts.slack * eps + 1e-14)
        .count();

    let pts: Vec<(f64, f64)> = trace.records[1..].iter().map(|r| (1.0 / r.k as f64, r.kl_mu)).collect();
    let (rate_a, rate_b) = if pts.len() >= 2 {
        let np = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let denom = np * sxx - sx * sx;
        if denom.abs() < 1e-300 {
            (0.0, 0.0)
        } else {
            let a = (np * sxy - sx * sy) / denom;
            let b = (sy - a * sx) / np;
            (a, b.max(0.0))
        }
    } else {
        (0.0, 0.0)
    };

    Ok(TraceDiagnostics {
        partial_sums,
        bound_constant,
        bound_satisfied,
        monotonicity_violations,
        rate_a,
        rate_b,
    })
}
