//! Bayesian compressive sensing by evidence maximization.
//!
//! The model is `g = Φf + ξ` with `ξ ~ N(0, β⁻¹I)` and a zero-mean Gaussian
//! prior `f_i ~ N(0, α_i⁻¹)`. For fixed `(α, β)` the posterior over `f` is
//! Gaussian with
//!
//! ```text
//! Σ = (βΦᵀΦ + A)⁻¹,   μ = βΣΦᵀg,   A = diag(α)
//! ```
//!
//! and the hyperparameters are re-estimated by the fixed point
//!
//! ```text
//! α_i ← γ_i / μ_i²,   β⁻¹ ← |g − Φμ|² / (s − Σ_i γ_i),   γ_i = 1 − α_i Σ_ii
//! ```
//!
//! The multitask variant shares `α` across measurement vectors and keeps a
//! noise precision per task. Each accepted iterate must not lower the log
//! marginal likelihood `log N(g; 0, β⁻¹I + ΦA⁻¹Φᵀ)`; when the fixed-point
//! step would, the solver falls back to the EM update of the same model,
//! and stops once neither step makes progress.

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use super::{BcsConfig, BetaInit, ReconstructionResult, SolverKind, StopReason};
use crate::error::{check_len, Error, Result};
use crate::sensing::{DesignMatrix, MeasurementVector};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Lower bound on the noise variance `β⁻¹`.
pub const BETA_INV_FLOOR: f64 = 1e-12;

/// Largest evidence decrease tolerated when accepting an iterate.
pub const EVIDENCE_SLACK: f64 = 1e-9;

/// Smallest precision produced by the fixed-point update.
const ALPHA_FLOOR: f64 = 1e-12;

/// Gaussian posterior over the active coefficients for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub mu: DVector<f64>,
    pub sigma_diag: DVector<f64>,
    /// `γ_i = 1 − α_i Σ_ii`, clamped to `[0, 1]`.
    pub gamma: DVector<f64>,
    /// `|g − Φμ|²`.
    pub residual_sq: f64,
    pub log_evidence: f64,
}

/// Complete solver state for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorState {
    pub mu: DVector<f64>,
    pub sigma_diag: DVector<f64>,
    pub gamma: DVector<f64>,
    /// Precision for every one of the `n` coefficients; `+inf` once pruned.
    pub alpha: DVector<f64>,
    pub beta: f64,
    /// Indices of the surviving coefficients, ascending. `mu`, `sigma_diag`
    /// and `gamma` are indexed by position in this list.
    pub active: Vec<usize>,
    pub evidence: f64,
}

impl PosteriorState {
    pub fn alpha_active(&self) -> DVector<f64> {
        DVector::from_iterator(self.active.len(), self.active.iter().map(|&i| self.alpha[i]))
    }
}

/// Quantities shared by every task for a given `(active set, α)`.
enum Factor {
    /// `ΦᵀΦ`, used for the `m x m` precision route.
    Direct(DMatrix<f64>),
    /// `ΦA⁻¹Φᵀ`, used for the `s x s` covariance route.
    Woodbury(DMatrix<f64>),
}

impl Factor {
    /// With more active columns than measurements the `s x s` covariance
    /// is the smaller system to factor.
    fn prepare(phi: &DMatrix<f64>, alpha: &DVector<f64>) -> Self {
        let (s, m) = phi.shape();
        if m > s {
            Factor::Woodbury(prior_kernel(phi, alpha))
        } else {
            Factor::Direct(phi.transpose() * phi)
        }
    }
}

fn prior_kernel(phi: &DMatrix<f64>, alpha: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = phi.clone();
    for (mut col, a) in scaled.column_iter_mut().zip(alpha.iter()) {
        col /= *a;
    }
    scaled * phi.transpose()
}

/// `L⁻¹` for a lower-triangular `L`, one column at a time, skipping the
/// leading zeros of each unit vector.
fn lower_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut inv = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut x = inv.column_mut(j);
        x[j] = 1.0;
        for k in j..n {
            let xk = x[k] / l[(k, k)];
            x[k] = xk;
            if xk != 0.0 {
                x.rows_range_mut(k + 1..).axpy(-xk, &l.view_range(k + 1.., k), 1.0);
            }
        }
    }
    inv
}

/// Squared Euclidean norm of every column.
fn column_norms_sq(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.norm_squared()))
}

fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

fn finish(
    mu: DVector<f64>,
    sigma_diag: DVector<f64>,
    alpha: &DVector<f64>,
    residual_sq: f64,
    log_evidence: f64,
) -> std::result::Result<Posterior, String> {
    if !log_evidence.is_finite() {
        return Err(format!("log evidence is {log_evidence}"));
    }
    if mu.iter().chain(sigma_diag.iter()).any(|v| !v.is_finite()) {
        return Err("non-finite posterior moments".into());
    }
    let gamma = sigma_diag.zip_map(alpha, |sig, a| (1.0 - a * sig).clamp(0.0, 1.0));
    Ok(Posterior {
        mu,
        sigma_diag,
        gamma,
        residual_sq,
        log_evidence,
    })
}

fn empty_posterior(g: &DVector<f64>, beta: f64) -> Posterior {
    let s = g.len() as f64;
    let residual_sq = g.norm_squared();
    Posterior {
        mu: DVector::zeros(0),
        sigma_diag: DVector::zeros(0),
        gamma: DVector::zeros(0),
        residual_sq,
        log_evidence: -0.5 * (s * LN_2PI - s * beta.ln() + beta * residual_sq),
    }
}

fn posterior_direct(
    phi: &DMatrix<f64>,
    gram: &DMatrix<f64>,
    alpha: &DVector<f64>,
    g: &DVector<f64>,
    beta: f64,
) -> std::result::Result<Posterior, String> {
    let s = phi.nrows() as f64;
    let mut precision = gram * beta;
    for (i, a) in alpha.iter().enumerate() {
        precision[(i, i)] += a;
    }
    let chol = Cholesky::new(precision).ok_or("posterior precision is not positive definite")?;
    let mu = chol.solve(&(phi.tr_mul(g) * beta));
    // Σ = L⁻ᵀL⁻¹, so Σ_ii is the squared norm of column i of L⁻¹.
    let sigma_diag = column_norms_sq(&lower_inverse(&chol.l()));
    let residual_sq = (g - phi * &mu).norm_squared();
    let prior_quad: f64 = alpha.iter().zip(mu.iter()).map(|(a, m)| a * m * m).sum();
    // det C = β^{-s} det(βΦᵀΦ + A) / det A
    let log_det_cov = -s * beta.ln() + log_det(&chol) - alpha.iter().map(|a| a.ln()).sum::<f64>();
    let log_evidence = -0.5 * (s * LN_2PI + log_det_cov + beta * residual_sq + prior_quad);
    finish(mu, sigma_diag, alpha, residual_sq, log_evidence)
}

fn posterior_woodbury(
    phi: &DMatrix<f64>,
    kernel: &DMatrix<f64>,
    alpha: &DVector<f64>,
    g: &DVector<f64>,
    beta: f64,
) -> std::result::Result<Posterior, String> {
    let s = phi.nrows();
    let mut cov = kernel.clone();
    for i in 0..s {
        cov[(i, i)] += 1.0 / beta;
    }
    let chol = Cholesky::new(cov).ok_or("marginal covariance is not positive definite")?;
    let weights = chol.solve(g);
    let mu = phi.tr_mul(&weights).component_div(alpha);
    // Σ_ii = 1/α_i − |L⁻¹φ_i|² / α_i²
    let projected = column_norms_sq(&(lower_inverse(&chol.l()) * phi));
    let sigma_diag = projected.zip_map(alpha, |p, a| {
        let d = 1.0 / a;
        d - d * d * p
    });
    let residual_sq = (g - phi * &mu).norm_squared();
    let log_evidence = -0.5 * (s as f64 * LN_2PI + log_det(&chol) + g.dot(&weights));
    finish(mu, sigma_diag, alpha, residual_sq, log_evidence)
}

fn solve_task(
    phi: &DMatrix<f64>,
    factor: &Factor,
    alpha: &DVector<f64>,
    g: &DVector<f64>,
    beta: f64,
) -> std::result::Result<Posterior, String> {
    if phi.ncols() == 0 {
        return Ok(empty_posterior(g, beta));
    }
    match factor {
        Factor::Direct(gram) => posterior_direct(phi, gram, alpha, g, beta),
        Factor::Woodbury(kernel) => posterior_woodbury(phi, kernel, alpha, g, beta),
    }
}

fn check_system(
    phi_active: &DMatrix<f64>,
    g: &DVector<f64>,
    alpha_active: &DVector<f64>,
    beta: f64,
) -> Result<()> {
    check_len("measurement vector", phi_active.nrows(), g.len())?;
    check_len("alpha", phi_active.ncols(), alpha_active.len())?;
    if alpha_active.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
        return Err(Error::InvalidConfig("alpha entries must be positive and finite".into()));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidConfig("beta must be positive and finite".into()));
    }
    Ok(())
}

/// Posterior mean, variance diagonal and well-determinedness for the active
/// columns `phi_active` under precisions `alpha_active` and noise precision
/// `beta`. The log evidence of the same configuration is returned alongside.
pub fn posterior_update(
    phi_active: &DMatrix<f64>,
    g: &DVector<f64>,
    alpha_active: &DVector<f64>,
    beta: f64,
) -> Result<Posterior> {
    check_system(phi_active, g, alpha_active, beta)?;
    let factor = Factor::prepare(phi_active, alpha_active);
    solve_task(phi_active, &factor, alpha_active, g, beta).map_err(|context| {
        Error::IllConditioned {
            iteration: 0,
            task: None,
            context,
        }
    })
}

/// `log N(g; 0, β⁻¹I + ΦA⁻¹Φᵀ)`, evaluated through a Cholesky factor of the
/// `s x s` covariance.
pub fn log_evidence(
    phi_active: &DMatrix<f64>,
    g: &DVector<f64>,
    alpha_active: &DVector<f64>,
    beta: f64,
) -> Result<f64> {
    check_system(phi_active, g, alpha_active, beta)?;
    let s = g.len();
    let mut cov = prior_kernel(phi_active, alpha_active);
    for i in 0..s {
        cov[(i, i)] += 1.0 / beta;
    }
    let chol = Cholesky::new(cov).ok_or_else(|| Error::IllConditioned {
        iteration: 0,
        task: None,
        context: "marginal covariance is not positive definite".into(),
    })?;
    let quad = g.dot(&chol.solve(g));
    Ok(-0.5 * (s as f64 * LN_2PI + log_det(&chol) + quad))
}

/// Shared precision update `α_i = Σ_k γ_ik / Σ_k μ_ik²` over `(μ_k, γ_k)`
/// pairs. With a single task this is the ordinary `γ_i / μ_i²`. Coefficients
/// whose means are all exactly zero map to `alpha_prune`.
pub fn shared_alpha_update<'a, I>(tasks: I, alpha_prune: f64) -> DVector<f64>
where
    I: IntoIterator<Item = (&'a DVector<f64>, &'a DVector<f64>)>,
{
    let mut sums: Option<(DVector<f64>, DVector<f64>)> = None;
    for (mu, gamma) in tasks {
        let (gamma_sum, mu_sq_sum) =
            sums.get_or_insert_with(|| (DVector::zeros(mu.len()), DVector::zeros(mu.len())));
        *gamma_sum += gamma;
        *mu_sq_sum += mu.component_mul(mu);
    }
    let Some((gamma_sum, mu_sq_sum)) = sums else {
        return DVector::zeros(0);
    };
    gamma_sum.zip_map(&mu_sq_sum, |gs, ms| {
        if ms == 0.0 {
            alpha_prune
        } else {
            (gs / ms).max(ALPHA_FLOOR)
        }
    })
}

/// Noise precision from `β⁻¹ = |g − Φμ|² / (s − Σγ)`, with `β⁻¹` floored at
/// [`BETA_INV_FLOOR`].
pub fn update_noise_precision(residual_sq: f64, rows: usize, gamma_sum: f64) -> Result<f64> {
    let denominator = rows as f64 - gamma_sum;
    if !(denominator > 0.0) {
        return Err(Error::DegenerateNoiseUpdate { denominator });
    }
    Ok(1.0 / (residual_sq / denominator).max(BETA_INV_FLOOR))
}

/// One fixed-point hyperparameter update for a single task. Returns the new
/// precisions over the active set and the new noise precision.
pub fn hyper_update(
    state: &PosteriorState,
    g: &DVector<f64>,
    phi_active: &DMatrix<f64>,
    alpha_prune: f64,
) -> Result<(DVector<f64>, f64)> {
    check_len("measurement vector", phi_active.nrows(), g.len())?;
    check_len("active columns", state.active.len(), phi_active.ncols())?;
    check_len("posterior mean", state.active.len(), state.mu.len())?;
    check_len("gamma", state.active.len(), state.gamma.len())?;
    let alpha = shared_alpha_update([(&state.mu, &state.gamma)], alpha_prune);
    let residual_sq = (g - phi_active * &state.mu).norm_squared();
    let beta = update_noise_precision(residual_sq, g.len(), state.gamma.sum())?;
    Ok((alpha, beta))
}

/// Log density of the marginal prior on one coefficient after integrating
/// out its Gamma(a, b) precision: a Student-t concentrated at zero.
pub fn marginal_log_prior(value: f64, a: f64, b: f64) -> f64 {
    a * b.ln() + ln_gamma(a + 0.5) - 0.5 * LN_2PI - ln_gamma(a) - (a + 0.5) * (b + 0.5 * value * value).ln()
}

#[derive(Clone, Copy)]
enum Step {
    FixedPoint,
    Em,
}

struct Iterate {
    active: Vec<usize>,
    alpha: DVector<f64>,
    betas: Vec<f64>,
    tasks: Vec<Posterior>,
    evidence: f64,
}

impl Iterate {
    fn evaluate(
        phi: &DesignMatrix,
        gs: &[&MeasurementVector],
        active: Vec<usize>,
        alpha: DVector<f64>,
        betas: Vec<f64>,
        iteration: usize,
    ) -> Result<Self> {
        let phi_active = phi.select_columns(&active);
        let factor = Factor::prepare(&phi_active, &alpha);
        let tag = |k: usize| (gs.len() > 1).then_some(k);
        let solve = |(k, (g, beta)): (usize, (&&MeasurementVector, &f64))| {
            solve_task(&phi_active, &factor, &alpha, &g.values, *beta).map_err(|context| {
                Error::IllConditioned {
                    iteration,
                    task: tag(k),
                    context,
                }
            })
        };
        let tasks = if gs.len() > 1 {
            gs.par_iter()
                .zip(betas.par_iter())
                .enumerate()
                .map(solve)
                .collect::<Result<Vec<_>>>()?
        } else {
            gs.iter()
                .zip(betas.iter())
                .enumerate()
                .map(solve)
                .collect::<Result<Vec<_>>>()?
        };
        let evidence = tasks.iter().map(|t| t.log_evidence).sum();
        Ok(Self {
            active,
            alpha,
            betas,
            tasks,
            evidence,
        })
    }

    fn propose(&self, step: Step, rows: usize, alpha_prune: f64) -> (DVector<f64>, Vec<f64>) {
        match step {
            Step::FixedPoint => {
                let alpha =
                    shared_alpha_update(self.tasks.iter().map(|t| (&t.mu, &t.gamma)), alpha_prune);
                let betas = self
                    .tasks
                    .iter()
                    .zip(&self.betas)
                    .map(|(t, &beta)| {
                        update_noise_precision(t.residual_sq, rows, t.gamma.sum()).unwrap_or(beta)
                    })
                    .collect();
                (alpha, betas)
            }
            Step::Em => {
                let count = self.tasks.len() as f64;
                let mut second_moment = DVector::zeros(self.active.len());
                for t in &self.tasks {
                    second_moment += t.mu.component_mul(&t.mu) + &t.sigma_diag;
                }
                let alpha = second_moment.map(|m| {
                    if m > 0.0 {
                        (count / m).max(ALPHA_FLOOR)
                    } else {
                        alpha_prune
                    }
                });
                let betas = self
                    .tasks
                    .iter()
                    .zip(&self.betas)
                    .map(|(t, &beta)| {
                        let noise = (t.residual_sq + t.gamma.sum() / beta) / rows as f64;
                        1.0 / noise.max(BETA_INV_FLOOR)
                    })
                    .collect();
                (alpha, betas)
            }
        }
    }

    /// Largest `|Δα_i| / α_i` over coefficients present in both iterates.
    fn relative_change(&self, next: &Iterate) -> f64 {
        let mut worst = 0.0f64;
        let mut j = 0;
        for (i, &index) in self.active.iter().enumerate() {
            if next.active.get(j) == Some(&index) {
                let old = self.alpha[i];
                worst = worst.max((next.alpha[j] - old).abs() / old);
                j += 1;
            }
        }
        worst
    }
}

fn prune(active: &[usize], alpha: &DVector<f64>, alpha_prune: f64) -> (Vec<usize>, DVector<f64>) {
    let keep: Vec<usize> = (0..active.len()).filter(|&i| alpha[i] < alpha_prune).collect();
    let indices = keep.iter().map(|&i| active[i]).collect();
    let values = DVector::from_iterator(keep.len(), keep.iter().map(|&i| alpha[i]));
    (indices, values)
}

fn initial_beta(g: &DVector<f64>, cfg: &BcsConfig) -> f64 {
    match cfg.beta_init {
        BetaInit::Fixed(beta) => beta,
        BetaInit::Auto => {
            let len = g.len() as f64;
            let mean = g.sum() / len;
            let var = g.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / len;
            let second = g.norm_squared() / len;
            if var > 0.0 {
                100.0 / var
            } else if second > 0.0 {
                100.0 / second
            } else {
                1.0
            }
        }
    }
}

fn sparse_bayes(
    phi: &DesignMatrix,
    gs: &[&MeasurementVector],
    cfg: &BcsConfig,
    solver: SolverKind,
) -> Result<Vec<ReconstructionResult>> {
    cfg.validate()?;
    if gs.is_empty() {
        return Err(Error::EmptyInput("measurement batch"));
    }
    let start = Instant::now();
    let (rows, cols) = (phi.rows(), phi.cols());
    for g in gs {
        check_len("measurement vector", rows, g.len())?;
    }

    let zero_result = |stop: StopReason, iterations: usize, trace: Vec<f64>| ReconstructionResult {
        f_hat: vec![0.0; cols],
        iterations,
        converged: true,
        stop,
        final_evidence: None,
        evidence_trace: trace,
        posterior: None,
        solver,
        wall_time: start.elapsed(),
    };

    if gs.iter().all(|g| g.values.iter().all(|&v| v == 0.0)) {
        return Ok(gs
            .iter()
            .map(|_| zero_result(StopReason::ZeroMeasurements, 0, Vec::new()))
            .collect());
    }

    let betas = gs.iter().map(|g| initial_beta(&g.values, cfg)).collect();
    let alpha = DVector::from_element(cols, cfg.alpha_init);
    let mut current = Iterate::evaluate(phi, gs, (0..cols).collect(), alpha, betas, 0)?;
    let mut trace = vec![current.evidence];
    let mut accepted_steps = 0;
    let mut stop = StopReason::MaxIterations;

    'outer: for iteration in 1..=cfg.max_iterations {
        let mut next = None;
        let mut failure = None;
        for step in [Step::FixedPoint, Step::Em] {
            let (alpha, betas) = current.propose(step, rows, cfg.alpha_prune);
            let (active, alpha) = prune(&current.active, &alpha, cfg.alpha_prune);
            if active.is_empty() {
                stop = StopReason::EmptyActiveSet;
                accepted_steps += 1;
                break 'outer;
            }
            match Iterate::evaluate(phi, gs, active, alpha, betas, iteration) {
                Ok(candidate) if candidate.evidence >= current.evidence - EVIDENCE_SLACK => {
                    next = Some(candidate);
                    break;
                }
                Ok(_) => failure = None,
                Err(e) => failure = Some(e),
            }
        }
        let Some(next) = next else {
            if let Some(e) = failure {
                return Err(e);
            }
            stop = StopReason::Stalled;
            break;
        };
        accepted_steps += 1;
        let pruned_any = next.active.len() < current.active.len();
        let change = current.relative_change(&next);
        trace.push(next.evidence);
        current = next;
        if !pruned_any && change < cfg.alpha_tolerance {
            stop = StopReason::Tolerance;
            break;
        }
    }

    if stop == StopReason::EmptyActiveSet {
        return Ok(gs
            .iter()
            .map(|_| zero_result(StopReason::EmptyActiveSet, accepted_steps, trace.clone()))
            .collect());
    }

    let wall_time = start.elapsed();
    let mut full_alpha = DVector::from_element(cols, f64::INFINITY);
    for (&index, &a) in current.active.iter().zip(current.alpha.iter()) {
        full_alpha[index] = a;
    }
    Ok(current
        .tasks
        .into_iter()
        .zip(current.betas)
        .map(|(task, beta)| {
            let mut f_hat = vec![0.0; cols];
            for (&index, &m) in current.active.iter().zip(task.mu.iter()) {
                f_hat[index] = m;
            }
            ReconstructionResult {
                f_hat,
                iterations: accepted_steps,
                converged: stop != StopReason::MaxIterations,
                stop,
                final_evidence: Some(task.log_evidence),
                evidence_trace: trace.clone(),
                posterior: Some(PosteriorState {
                    mu: task.mu,
                    sigma_diag: task.sigma_diag,
                    gamma: task.gamma,
                    alpha: full_alpha.clone(),
                    beta,
                    active: current.active.clone(),
                    evidence: task.log_evidence,
                }),
                solver,
                wall_time,
            }
        })
        .collect())
}

/// Single-vector Bayesian compressive sensing.
pub fn bcs_reconstruct(
    phi: &DesignMatrix,
    g: &MeasurementVector,
    cfg: &BcsConfig,
) -> Result<ReconstructionResult> {
    let mut results = sparse_bayes(phi, &[g], cfg, SolverKind::Bcs)?;
    Ok(results.remove(0))
}

/// Joint reconstruction of a batch of measurement vectors that share one
/// precision vector `α`. Each task keeps its own noise precision. Results are
/// returned in input order; `wall_time` is the time of the whole batch.
pub fn mt_bcs_reconstruct(
    phi: &DesignMatrix,
    batch: &[MeasurementVector],
    cfg: &BcsConfig,
) -> Result<Vec<ReconstructionResult>> {
    let refs: Vec<&MeasurementVector> = batch.iter().collect();
    sparse_bayes(phi, &refs, cfg, SolverKind::MtBcs)
}
