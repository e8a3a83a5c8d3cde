//! Sparse reconstruction of foreground vectors from compressed measurements.

mod bayes;
mod omp;

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

pub use bayes::{
    bcs_reconstruct, hyper_update, log_evidence, marginal_log_prior, mt_bcs_reconstruct,
    posterior_update, shared_alpha_update, update_noise_precision, Posterior, PosteriorState,
    BETA_INV_FLOOR, EVIDENCE_SLACK,
};
pub use omp::{omp_reconstruct, OmpConfig};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolverKind {
    Bcs,
    MtBcs,
    Omp,
}

impl SolverKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverKind::Bcs => "bcs",
            SolverKind::MtBcs => "mtbcs",
            SolverKind::Omp => "omp",
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bcs" => Ok(SolverKind::Bcs),
            "mtbcs" | "mt-bcs" => Ok(SolverKind::MtBcs),
            "omp" => Ok(SolverKind::Omp),
            other => Err(Error::InvalidConfig(format!("unknown solver {other:?}"))),
        }
    }
}

/// Initial noise precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaInit {
    /// `100 / var(g)` per measurement vector.
    Auto,
    Fixed(f64),
}

/// Settings for Bayesian compressive sensing, single and multitask.
///
/// The Gamma hyperparameters `a, b, c, d` default to `1e-6` and are treated
/// as the improper flat limit: they do not enter the fixed-point updates.
/// `hyper_a`/`hyper_b` parameterize [`marginal_log_prior`].
#[derive(Debug, Clone, PartialEq)]
pub struct BcsConfig {
    pub hyper_a: f64,
    pub hyper_b: f64,
    pub hyper_c: f64,
    pub hyper_d: f64,
    pub max_iterations: usize,
    /// Stop when `max |Δα_i| / α_i` over surviving indices falls below this.
    pub alpha_tolerance: f64,
    /// Indices whose precision reaches this value are pruned to exactly zero.
    pub alpha_prune: f64,
    pub beta_init: BetaInit,
    pub alpha_init: f64,
}

impl Default for BcsConfig {
    fn default() -> Self {
        Self {
            hyper_a: 1e-6,
            hyper_b: 1e-6,
            hyper_c: 1e-6,
            hyper_d: 1e-6,
            max_iterations: 1000,
            alpha_tolerance: 1e-3,
            alpha_prune: 1e12,
            beta_init: BetaInit::Auto,
            alpha_init: 1.0,
        }
    }
}

impl BcsConfig {
    pub fn validate(&self) -> Result<()> {
        let hypers = [self.hyper_a, self.hyper_b, self.hyper_c, self.hyper_d];
        if hypers.iter().any(|h| !(h.is_finite() && *h >= 0.0)) {
            return Err(Error::InvalidConfig(
                "Gamma hyperparameters must be finite and nonnegative".into(),
            ));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if !(self.alpha_tolerance > 0.0) {
            return Err(Error::InvalidConfig("alpha_tolerance must be positive".into()));
        }
        if !(self.alpha_init > 0.0 && self.alpha_init.is_finite()) {
            return Err(Error::InvalidConfig("alpha_init must be positive".into()));
        }
        if !(self.alpha_prune > self.alpha_init) {
            return Err(Error::InvalidConfig(
                "alpha_prune must exceed alpha_init".into(),
            ));
        }
        if let BetaInit::Fixed(beta) = self.beta_init {
            if !(beta > 0.0 && beta.is_finite()) {
                return Err(Error::InvalidConfig("beta_init must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Why an iterative solver stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Measurements were identically zero.
    ZeroMeasurements,
    /// Hyperparameters stopped changing (BCS) or the residual met the
    /// tolerance (OMP).
    Tolerance,
    /// Neither fixed-point step could raise the evidence further.
    Stalled,
    /// Every coefficient was pruned; the signal is indistinguishable from noise.
    EmptyActiveSet,
    /// OMP selected `max_atoms` columns.
    AtomBudget,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    /// Estimated foreground; exactly zero outside the surviving support.
    pub f_hat: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub stop: StopReason,
    /// Log marginal likelihood at the final iterate (Bayesian solvers only).
    pub final_evidence: Option<f64>,
    /// Log marginal likelihood after every accepted iterate, starting with
    /// the initial hyperparameters. For multitask runs this is the joint
    /// evidence of the batch.
    pub evidence_trace: Vec<f64>,
    /// Final posterior, for Bayesian solvers that finished with a nonempty
    /// active set.
    pub posterior: Option<PosteriorState>,
    pub solver: SolverKind,
    pub wall_time: Duration,
}

impl ReconstructionResult {
    pub fn support(&self) -> Vec<usize> {
        self.f_hat
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}
