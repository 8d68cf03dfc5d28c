//! Minimal dense symmetric linear algebra: Cholesky factorization with a
//! jitter-escalation policy, triangular solves, and (for tests) a Jacobi
//! eigensolver. Matrices are row-major `Vec<f64>` of length `n·n`.
//!
//! Kept hand-rolled rather than pulling in a matrix crate: the sizes here are
//! desk-scale (n ≤ a few hundred), the likelihood code needs the failing
//! pivot for error reporting, and bit-level determinism across platforms
//! matters for seeded experiments.

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix,
/// together with the diagonal jitter that had to be added to factor it.
#[derive(Debug, Clone)]
pub(crate) struct CholFactor {
    pub n: usize,
    /// Row-major `n×n`; entries above the diagonal are zero.
    pub l: Vec<f64>,
    /// Absolute diagonal inflation applied before factorization succeeded.
    pub jitter: f64,
}

/// Attempts an in-place Cholesky of `a` (row-major, lower triangle read).
/// On failure returns the index and value of the first nonpositive pivot.
fn cholesky_once(a: &[f64], n: usize) -> std::result::Result<Vec<f64>, (usize, f64)> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(sum > 0.0) || !sum.is_finite() {
                    return Err((i, sum));
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// Factors `a`, escalating diagonal jitter on failure: first no jitter, then
/// `1e-8·scale` growing tenfold up to `1e-2·scale`. `scale` should be the
/// kernel's marginal variance so the inflation is dimensionally meaningful.
pub(crate) fn cholesky_with_jitter(a: &[f64], n: usize, scale: f64) -> Result<CholFactor> {
    debug_assert_eq!(a.len(), n * n);
    if !scale.is_finite() || scale <= 0.0 {
        return Err(Error::Numerical(format!(
            "covariance scale {scale:e} is not a positive finite number"
        )));
    }
    let mut worst_pivot = f64::INFINITY;
    let mut worst_index = 0;
    let mut jitter = 0.0;
    loop {
        let mut work = a.to_vec();
        if jitter > 0.0 {
            for i in 0..n {
                work[i * n + i] += jitter;
            }
        }
        match cholesky_once(&work, n) {
            Ok(l) => return Ok(CholFactor { n, l, jitter }),
            Err((index, pivot)) => {
                if pivot < worst_pivot {
                    worst_pivot = pivot;
                    worst_index = index;
                }
                jitter = if jitter == 0.0 { 1e-8 * scale } else { jitter * 10.0 };
                // `!(0 < jitter <= 1e-2·scale)` written so that a non-finite
                // scale (overflowed variance in a trial step) falls through to
                // the error instead of escalating forever.
                if !jitter.is_finite() || jitter <= 0.0 || jitter > 1e-2 * scale {
                    return Err(Error::Numerical(format!(
                        "covariance factorization failed after jitter escalation to 1e-2·scale; \
                         smallest failing pivot {worst_pivot:.6e} at index {worst_index}"
                    )));
                }
            }
        }
    }
}

impl CholFactor {
    /// Solves `L x = b` by forward substitution.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for i in 0..n {
            let mut sum = x[i];
            for k in 0..i {
                sum -= self.l[i * n + k] * x[k];
            }
            x[i] = sum / self.l[i * n + i];
        }
        x
    }

    /// Solves `Lᵀ x = b` by backward substitution.
    pub fn solve_lower_transpose(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for i in (0..n).rev() {
            let mut sum = x[i];
            for k in i + 1..n {
                sum -= self.l[k * n + i] * x[k];
            }
            x[i] = sum / self.l[i * n + i];
        }
        x
    }

    /// Solves `(L Lᵀ) x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.solve_lower_transpose(&self.solve_lower(b))
    }

    /// `log |L Lᵀ| = 2 Σ log L_ii`.
    pub fn log_det(&self) -> f64 {
        (0..self.n).map(|i| self.l[i * self.n + i].ln()).sum::<f64>() * 2.0
    }

    /// `L z` — used for exact multivariate-normal sampling.
    pub fn lower_times(&self, z: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut sum = 0.0;
            for k in 0..=i {
                sum += self.l[i * n + k] * z[k];
            }
            out[i] = sum;
        }
        out
    }
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
/// Test-support oracle for positive-definiteness checks; not part of any
/// production path.
#[cfg(test)]
pub(crate) fn symmetric_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
    let mut m = a.to_vec();
    let norm: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += m[p * n + q] * m[p * n + q];
            }
        }
        if off.sqrt() <= 1e-14 * norm {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
    eig
}
