//! Independent reference implementations used by the integration tests.
//! Everything here works on plain `Vec<f64>` with textbook loops so that it
//! shares no code path with the library.

#![allow(dead_code, clippy::needless_range_loop, clippy::too_many_arguments)]

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct TestRng(ChaCha8Rng);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.0.next_u64() % n as u64) as usize
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// `k` distinct indices in `0..n`, ascending.
    pub fn subset(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        let mut picked = pool[..k].to_vec();
        picked.sort_unstable();
        picked
    }
}

/// Row-major dense matrix.
#[derive(Clone, Debug)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| (0..self.cols).map(|c| self.at(r, c) * x[c]).sum())
            .collect()
    }

    pub fn transpose_matvec(&self, y: &[f64]) -> Vec<f64> {
        (0..self.cols)
            .map(|c| (0..self.rows).map(|r| self.at(r, c) * y[r]).sum())
            .collect()
    }
}

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn invert(a: &Dense) -> Dense {
    assert_eq!(a.rows, a.cols);
    let n = a.rows;
    let mut work = a.clone();
    let mut inv = Dense::zeros(n, n);
    for i in 0..n {
        inv.set(i, i, 1.0);
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| work.at(x, col).abs().total_cmp(&work.at(y, col).abs()))
            .unwrap();
        for c in 0..n {
            work.data.swap(col * n + c, pivot * n + c);
            inv.data.swap(col * n + c, pivot * n + c);
        }
        let p = work.at(col, col);
        assert!(p != 0.0, "singular matrix");
        for c in 0..n {
            work.set(col, c, work.at(col, c) / p);
            inv.set(col, c, inv.at(col, c) / p);
        }
        for r in 0..n {
            if r != col {
                let factor = work.at(r, col);
                if factor != 0.0 {
                    for c in 0..n {
                        work.set(r, c, work.at(r, c) - factor * work.at(col, c));
                        inv.set(r, c, inv.at(r, c) - factor * inv.at(col, c));
                    }
                }
            }
        }
    }
    inv
}

/// `ln det` of a symmetric positive definite matrix via an `LDLᵀ`-free
/// Gaussian elimination (no pivoting needed for SPD input).
pub fn log_det_spd(a: &Dense) -> f64 {
    let n = a.rows;
    let mut w = a.clone();
    let mut total = 0.0;
    for k in 0..n {
        let p = w.at(k, k);
        assert!(p > 0.0, "matrix is not positive definite");
        total += p.ln();
        for r in k + 1..n {
            let factor = w.at(r, k) / p;
            for c in k..n {
                w.set(r, c, w.at(r, c) - factor * w.at(k, c));
            }
        }
    }
    total
}

/// Solve `A x = b` through the explicit inverse.
pub fn solve(a: &Dense, b: &[f64]) -> Vec<f64> {
    invert(a).matvec(b)
}

/// Posterior moments from the textbook formulas
/// `Σ = (βΦᵀΦ + diag α)⁻¹`, `μ = βΣΦᵀg`.
pub fn dense_posterior(phi: &Dense, g: &[f64], alpha: &[f64], beta: f64) -> (Vec<f64>, Vec<f64>) {
    let m = phi.cols;
    let mut precision = Dense::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            let dot: f64 = (0..phi.rows).map(|r| phi.at(r, i) * phi.at(r, j)).sum();
            precision.set(i, j, beta * dot);
        }
        precision.set(i, i, precision.at(i, i) + alpha[i]);
    }
    let sigma = invert(&precision);
    let rhs: Vec<f64> = phi.transpose_matvec(g).into_iter().map(|v| beta * v).collect();
    let mu = sigma.matvec(&rhs);
    let diag = (0..m).map(|i| sigma.at(i, i)).collect();
    (mu, diag)
}

/// `log N(g; 0, β⁻¹I + Φ diag(α)⁻¹ Φᵀ)` by direct construction of the
/// marginal covariance.
pub fn dense_log_evidence(phi: &Dense, g: &[f64], alpha: &[f64], beta: f64) -> f64 {
    let s = phi.rows;
    let mut cov = Dense::zeros(s, s);
    for r in 0..s {
        for c in 0..s {
            let v: f64 = (0..phi.cols).map(|i| phi.at(r, i) * phi.at(c, i) / alpha[i]).sum();
            cov.set(r, c, v);
        }
        cov.set(r, r, cov.at(r, r) + 1.0 / beta);
    }
    let x = solve(&cov, g);
    let quad: f64 = g.iter().zip(&x).map(|(a, b)| a * b).sum();
    -0.5 * (s as f64 * (2.0 * std::f64::consts::PI).ln() + log_det_spd(&cov) + quad)
}

/// Least-squares coefficients of `g` on the columns `support` of `phi`, via
/// the normal equations.
pub fn least_squares(phi: &Dense, g: &[f64], support: &[usize]) -> Vec<f64> {
    let k = support.len();
    let mut gram = Dense::zeros(k, k);
    let mut rhs = vec![0.0; k];
    for (a, &i) in support.iter().enumerate() {
        rhs[a] = (0..phi.rows).map(|r| phi.at(r, i) * g[r]).sum();
        for (b, &j) in support.iter().enumerate() {
            gram.set(a, b, (0..phi.rows).map(|r| phi.at(r, i) * phi.at(r, j)).sum());
        }
    }
    solve(&gram, &rhs)
}

/// SSIM by visiting every valid window position and computing the weighted
/// statistics from deviations about the local means.
pub fn brute_force_ssim(
    x: &[f64],
    y: &[f64],
    rows: usize,
    cols: usize,
    window: usize,
    sigma: f64,
    c1: f64,
    c2: f64,
) -> f64 {
    let radius = (window / 2) as f64;
    let mut w = vec![0.0; window * window];
    for a in 0..window {
        for b in 0..window {
            let (da, db) = (a as f64 - radius, b as f64 - radius);
            w[a * window + b] = (-(da * da + db * db) / (2.0 * sigma * sigma)).exp();
        }
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);

    let mut sum = 0.0;
    let mut count = 0usize;
    for top in 0..=rows - window {
        for left in 0..=cols - window {
            let px = |a: usize, b: usize| x[(top + a) * cols + left + b];
            let py = |a: usize, b: usize| y[(top + a) * cols + left + b];
            let (mut mx, mut my) = (0.0, 0.0);
            for a in 0..window {
                for b in 0..window {
                    mx += w[a * window + b] * px(a, b);
                    my += w[a * window + b] * py(a, b);
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for a in 0..window {
                for b in 0..window {
                    let (dx, dy) = (px(a, b) - mx, py(a, b) - my);
                    let wt = w[a * window + b];
                    vx += wt * dx * dx;
                    vy += wt * dy * dy;
                    cxy += wt * dx * dy;
                }
            }
            sum += (2.0 * mx * my + c1) * (2.0 * cxy + c2)
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    sum / count as f64
}

/// Gaussian matrix with `N(0, 1)` entries.
pub fn gaussian(rng: &mut TestRng, rows: usize, cols: usize) -> Dense {
    Dense {
        rows,
        cols,
        data: (0..rows * cols).map(|_| rng.normal()).collect(),
    }
}

/// Largest absolute difference scaled by the largest reference magnitude.
pub fn rel_diff(value: &[f64], reference: &[f64]) -> f64 {
    assert_eq!(value.len(), reference.len());
    let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = value
        .iter()
        .zip(reference)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
