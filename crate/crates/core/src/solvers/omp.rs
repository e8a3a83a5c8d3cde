//! Orthogonal matching pursuit.

use std::time::Instant;

use nalgebra::DVector;

use super::{ReconstructionResult, SolverKind, StopReason};
use crate::error::{check_len, Error, Result};
use crate::sensing::{DesignMatrix, MeasurementVector};

/// A new column whose component orthogonal to the selected span is below
/// this fraction of its norm is treated as linearly dependent.
const DEPENDENCE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct OmpConfig {
    /// `None` selects at most `rows / 2` atoms.
    pub max_atoms: Option<usize>,
    /// Stop once `|r| / |g|` is at or below this value.
    pub residual_tol: f64,
}

impl Default for OmpConfig {
    fn default() -> Self {
        Self {
            max_atoms: None,
            residual_tol: 1e-2,
        }
    }
}

impl OmpConfig {
    pub fn atoms_for(&self, rows: usize) -> usize {
        self.max_atoms.unwrap_or((rows / 2).max(1))
    }
}

/// Greedy reconstruction: pick the column most correlated with the residual
/// (normalized by column norm, lowest index on ties), refit least squares on
/// every selected column, repeat.
///
/// The selected columns are kept as an incrementally built QR factorization
/// (modified Gram-Schmidt with one re-orthogonalization pass), so each refit
/// is a triangular solve.
pub fn omp_reconstruct(
    phi: &DesignMatrix,
    g: &MeasurementVector,
    max_atoms: usize,
    residual_tol: f64,
) -> Result<ReconstructionResult> {
    let start = Instant::now();
    let (rows, cols) = (phi.rows(), phi.cols());
    check_len("measurement vector", rows, g.len())?;
    if max_atoms == 0 || max_atoms > rows {
        return Err(Error::InvalidConfig(format!(
            "max_atoms must lie in 1..={rows}, got {max_atoms}"
        )));
    }
    if !(residual_tol >= 0.0) {
        return Err(Error::InvalidConfig("residual_tol must be nonnegative".into()));
    }

    let matrix = phi.matrix();
    let target = &g.values;
    let target_norm = target.norm();
    let mut f_hat = vec![0.0; cols];
    if target_norm == 0.0 {
        return Ok(ReconstructionResult {
            f_hat,
            iterations: 0,
            converged: true,
            stop: StopReason::ZeroMeasurements,
            final_evidence: None,
            evidence_trace: Vec::new(),
            posterior: None,
            solver: SolverKind::Omp,
            wall_time: start.elapsed(),
        });
    }

    let column_norms: Vec<f64> = matrix.column_iter().map(|c| c.norm()).collect();
    let mut selected: Vec<usize> = Vec::with_capacity(max_atoms);
    let mut is_selected = vec![false; cols];
    // Orthonormal basis of the selected span and the upper-triangular factor,
    // stored column by column.
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(max_atoms);
    let mut triangular: Vec<Vec<f64>> = Vec::with_capacity(max_atoms);
    let mut projections: Vec<f64> = Vec::with_capacity(max_atoms);
    let mut residual = target.clone();
    let mut stop = StopReason::AtomBudget;

    while selected.len() < max_atoms {
        if residual.norm() / target_norm <= residual_tol {
            stop = StopReason::Tolerance;
            break;
        }
        let correlations = matrix.tr_mul(&residual);
        let mut best: Option<(usize, f64)> = None;
        for (j, (&c, &norm)) in correlations.iter().zip(&column_norms).enumerate() {
            if is_selected[j] || norm == 0.0 {
                continue;
            }
            let score = c.abs() / norm;
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((j, score));
            }
        }
        let step = selected.len() + 1;
        let Some((column, _)) = best else {
            return Err(Error::RankDeficient { step, column: 0 });
        };

        let atom = matrix.column(column).into_owned();
        let mut orthogonal = atom.clone();
        let mut coefficients = vec![0.0; basis.len()];
        for _ in 0..2 {
            for (q, coef) in basis.iter().zip(coefficients.iter_mut()) {
                let c = q.dot(&orthogonal);
                orthogonal.axpy(-c, q, 1.0);
                *coef += c;
            }
        }
        let diagonal = orthogonal.norm();
        if diagonal <= DEPENDENCE_TOL * column_norms[column] {
            return Err(Error::RankDeficient { step, column });
        }
        orthogonal /= diagonal;
        coefficients.push(diagonal);

        let projection = orthogonal.dot(target);
        residual.axpy(-orthogonal.dot(&residual), &orthogonal, 1.0);
        basis.push(orthogonal);
        triangular.push(coefficients);
        projections.push(projection);
        selected.push(column);
        is_selected[column] = true;
    }
    if stop == StopReason::AtomBudget && residual.norm() / target_norm <= residual_tol {
        stop = StopReason::Tolerance;
    }

    // Back substitution R x = Qᵀg.
    let k = selected.len();
    let mut solution = vec![0.0; k];
    for i in (0..k).rev() {
        let tail: f64 = (i + 1..k).map(|j| triangular[j][i] * solution[j]).sum();
        solution[i] = (projections[i] - tail) / triangular[i][i];
    }
    for (&index, value) in selected.iter().zip(solution) {
        f_hat[index] = value;
    }

    Ok(ReconstructionResult {
        f_hat,
        iterations: k,
        converged: stop == StopReason::Tolerance,
        stop,
        final_evidence: None,
        evidence_trace: Vec::new(),
        posterior: None,
        solver: SolverKind::Omp,
        wall_time: start.elapsed(),
    })
}
