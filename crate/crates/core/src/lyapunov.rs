//! Linear Lyapunov certificates for the reflected gap process.
//!
//! A vector `v > 0` certifies geometric ergodicity when
//!
//! ```text
//! ⟨γ, v⟩ < 0   and   ⟨r_j, v⟩ ≤ 0 for every reflection column r_j of R.
//! ```
//!
//! By Farkas' lemma such a `v` is tied to the sign pattern of `−R⁻¹γ`. The
//! explicit candidate
//!
//! ```text
//! v_i = (n/2 − 1)² − (n/2 − i)² + ε,   i = 1..n−1,
//! ```
//!
//! is provided together with a checker that reports every inner product.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// `x < 0` is tested as `x < −STRICT_TOL`.
pub const STRICT_TOL: f64 = 1e-12;
/// `x ≤ 0` is tested as `x ≤ WEAK_TOL`.
pub const WEAK_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LyapunovError {
    #[error("reflection matrix is singular")]
    SingularR,
    #[error("need n >= 4, got {0}")]
    NTooSmall(usize),
    #[error("eps = {eps} outside (0, {limit})")]
    EpsOutOfRange { eps: f64, limit: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Inner products of a candidate vector with the drift and reflection columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovCertificate {
    pub v: Vec<f64>,
    pub drift_inner: f64,
    pub reflection_inners: Vec<f64>,
    pub valid: bool,
}

/// `−R⁻¹γ`.
pub fn farkas_vector(r: &DMatrix<f64>, gamma: &[f64]) -> Result<Vec<f64>, LyapunovError> {
    if !r.is_square() || r.nrows() != gamma.len() {
        return Err(LyapunovError::DimensionMismatch(format!(
            "R is {}x{}, gamma has {}",
            r.nrows(),
            r.ncols(),
            gamma.len()
        )));
    }
    let lu = r.clone().lu();
    if !lu.is_invertible() {
        return Err(LyapunovError::SingularR);
    }
    let g = DVector::from_column_slice(gamma);
    let x = lu.solve(&g).ok_or(LyapunovError::SingularR)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(LyapunovError::SingularR);
    }
    Ok(x.iter().map(|v| -v).collect())
}

/// True iff `−R⁻¹γ` has a strictly negative coordinate, i.e. lies outside the
/// closed orthant.
pub fn farkas_criterion(r: &DMatrix<f64>, gamma: &[f64]) -> Result<bool, LyapunovError> {
    Ok(farkas_vector(r, gamma)?.iter().any(|&x| x < -STRICT_TOL))
}

/// Upper limit `(n/2 − 1)² − (n/2 − 2)² = n − 3` of the admissible `ε`.
pub fn eps_limit(n: usize) -> f64 {
    let h = n as f64 / 2.0;
    (h - 1.0).powi(2) - (h - 2.0).powi(2)
}

/// `v_i = (n/2 − 1)² − (n/2 − i)² + ε` for `i = 1..n−1`.
pub fn explicit_v(n: usize, eps: f64) -> Result<Vec<f64>, LyapunovError> {
    if n < 4 {
        return Err(LyapunovError::NTooSmall(n));
    }
    let limit = eps_limit(n);
    if !(eps > 0.0 && eps < limit) {
        return Err(LyapunovError::EpsOutOfRange { eps, limit });
    }
    let h = n as f64 / 2.0;
    Ok((1..n).map(|i| (h - 1.0).powi(2) - (h - i as f64).powi(2) + eps).collect())
}

/// Computes `⟨γ, v⟩`, `⟨r_j, v⟩` and the validity flag.
pub fn verify_certificate(
    v: &[f64],
    r: &DMatrix<f64>,
    gamma: &[f64],
) -> Result<LyapunovCertificate, LyapunovError> {
    let d = v.len();
    if r.nrows() != d || r.ncols() != d || gamma.len() != d {
        return Err(LyapunovError::DimensionMismatch(format!(
            "v has {d}, R is {}x{}, gamma has {}",
            r.nrows(),
            r.ncols(),
            gamma.len()
        )));
    }
    let drift_inner: f64 = gamma.iter().zip(v).map(|(g, x)| g * x).sum();
    let reflection_inners: Vec<f64> =
        (0..d).map(|j| (0..d).map(|i| r[(i, j)] * v[i]).sum()).collect();
    let valid = drift_inner < -STRICT_TOL
        && reflection_inners.iter().all(|&x| x <= WEAK_TOL)
        && v.iter().all(|&x| x > 0.0);
    Ok(LyapunovCertificate { v: v.to_vec(), drift_inner, reflection_inners, valid })
}
