//! Rank-based diffusion model and its closed-form constants.
//!
//! The particle system is
//!
//! ```text
//! dX_i(t) = δ_{rank(i)} dt + σ_{rank(i)} dW_i(t),   i = 1..n
//! ```
//!
//! with ranks taken in ascending order. The gaps `Y_k = X_(k+1) − X_(k)`
//! form a reflected Brownian motion in the orthant with covariance Ξ,
//! reflection matrix R and drift γ_k = δ_{k+1} − δ_k. When
//!
//! ```text
//! α_k = 2 Σ_{i≤k} (δ_i − δ̄) > 0   for all k
//! ```
//!
//! the gaps are ergodic, and under equal increments of σ² their
//! stationary law is a product of exponentials with rates
//! `α̃_k = 2α_k / (σ_k² + σ_{k+1}²)`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::compensated_sum;

/// Default tolerance for matrix residuals.
pub const MATRIX_TOL: f64 = 1e-10;
/// Default tolerance for scalar condition checks.
pub const CONDITION_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("volatility sigma[{index}] = {value} is not strictly positive")]
    NonPositiveSigma { index: usize, value: f64 },
    #[error("dimension n = {0} is too small (need n >= 2)")]
    DimensionTooSmall(usize),
    #[error("length mismatch: n = {n}, delta has {delta}, sigma has {sigma}")]
    LengthMismatch { n: usize, delta: usize, sigma: usize },
    #[error("non-finite parameter value")]
    NonFinite,
    #[error("model is unstable: alpha[{index}] = {value} <= 0")]
    UnstableModel { index: usize, value: f64 },
    #[error("all drifts are equal; the centered Poincare constant is undefined")]
    DegenerateDrift,
    #[error("covariance matrix is not numerically positive definite")]
    FactorizationFailure,
}

/// Parameters `(n, δ, σ)` of the rank-based system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub n: usize,
    pub delta: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl ModelParams {
    /// Builds and validates parameters.
    pub fn new(delta: Vec<f64>, sigma: Vec<f64>) -> Result<Self, ModelError> {
        let p = ModelParams { n: delta.len(), delta, sigma };
        p.validate()?;
        Ok(p)
    }

    /// Atlas model: drift `delta` on the lowest rank, zero elsewhere, unit volatilities.
    pub fn atlas(n: usize, delta: f64) -> Result<Self, ModelError> {
        let mut d = vec![0.0; n];
        if let Some(first) = d.first_mut() {
            *first = delta;
        }
        if n < 2 {
            return Err(ModelError::DimensionTooSmall(n));
        }
        ModelParams::new(d, vec![1.0; n])
    }

    /// Checks `n ≥ 2`, matching lengths, finite values and `σ_i > 0`.
    pub fn validate(&self) -> Result<&Self, ModelError> {
        if self.n < 2 {
            return Err(ModelError::DimensionTooSmall(self.n));
        }
        if self.delta.len() != self.n || self.sigma.len() != self.n {
            return Err(ModelError::LengthMismatch {
                n: self.n,
                delta: self.delta.len(),
                sigma: self.sigma.len(),
            });
        }
        if self.delta.iter().chain(&self.sigma).any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        if let Some((index, &value)) = self.sigma.iter().enumerate().find(|(_, s)| **s <= 0.0) {
            return Err(ModelError::NonPositiveSigma { index, value });
        }
        Ok(self)
    }

    /// True when every volatility equals one.
    pub fn has_unit_sigma(&self) -> bool {
        self.sigma.iter().all(|&s| s == 1.0)
    }
}

/// Validates and returns a copy of the parameters.
pub fn validate(params: &ModelParams) -> Result<ModelParams, ModelError> {
    params.validate().cloned()
}

/// Every closed-form quantity attached to a parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedConstants {
    pub alpha: Vec<f64>,
    pub alpha_tilde: Vec<f64>,
    pub stable: bool,
    pub lambda_n: f64,
    /// `4λ_n / min α̃²`, present only for stable models.
    pub beta: Option<f64>,
    /// Poincaré constant of ν, present only for stable models.
    pub c_nu: Option<f64>,
    /// Poincaré constant of the centered system, absent for equal drifts.
    pub c_p_centered: Option<f64>,
    pub gamma: Vec<f64>,
    pub xi: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

fn mean_drift(delta: &[f64]) -> f64 {
    if delta.iter().all(|&d| d == delta[0]) {
        return delta[0];
    }
    compensated_sum(delta.iter().copied()) / delta.len() as f64
}

/// `α_k = 2 Σ_{i≤k}(δ_i − δ̄)` for k = 1..n−1, and whether all are positive.
pub fn compute_alphas(params: &ModelParams) -> (Vec<f64>, bool) {
    let mean = mean_drift(&params.delta);
    let centered: Vec<f64> = params.delta.iter().map(|d| d - mean).collect();
    let alpha: Vec<f64> = (1..params.n)
        .map(|k| 2.0 * compensated_sum(centered[..k].iter().copied()))
        .collect();
    let stable = alpha.iter().all(|&a| a > 0.0);
    (alpha, stable)
}

/// Stationary exponential rates `α̃_k = 2α_k/(σ_k² + σ_{k+1}²)`.
pub fn alpha_tilde(params: &ModelParams, alpha: &[f64]) -> Vec<f64> {
    alpha
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let s = params.sigma[k].powi(2) + params.sigma[k + 1].powi(2);
            2.0 * a / s
        })
        .collect()
}

/// Whether `σ_{k+1}² − σ_k²` is the same for every k, within `tol`.
pub fn check_equal_variance_increments(params: &ModelParams, tol: f64) -> bool {
    let s2: Vec<f64> = params.sigma.iter().map(|s| s * s).collect();
    let first = s2[1] - s2[0];
    s2.windows(2).all(|w| ((w[1] - w[0]) - first).abs() <= tol)
}

/// `λ_n = 1/(2 − 2cos(π/n))`, the reciprocal of the smallest eigenvalue of `A′A`
/// for the n×(n−1) difference matrix `A`.
pub fn lambda_n(n: usize) -> f64 {
    let c = (std::f64::consts::PI / n as f64).cos();
    1.0 / (2.0 - 2.0 * c)
}

/// `β = 4λ_n / (min_k α̃_k)²`.
pub fn beta_constant(derived: &DerivedConstants) -> Result<f64, ModelError> {
    let m = min_alpha_tilde(derived)?;
    Ok(4.0 * derived.lambda_n / (m * m))
}

/// Poincaré constant of the product-exponential law ν: `4 / (min_k α̃_k)²`.
pub fn poincare_constant_nu(derived: &DerivedConstants) -> Result<f64, ModelError> {
    let m = min_alpha_tilde(derived)?;
    Ok(4.0 / (m * m))
}

fn min_alpha_tilde(derived: &DerivedConstants) -> Result<f64, ModelError> {
    if let Some((index, &value)) = derived.alpha.iter().enumerate().find(|(_, a)| **a <= 0.0) {
        return Err(ModelError::UnstableModel { index, value });
    }
    Ok(derived.alpha_tilde.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Poincaré constant of the centered system, `1/Σ_i (δ_i − δ̄)²`.
pub fn centered_poincare_constant(params: &ModelParams) -> Result<f64, ModelError> {
    let mean = mean_drift(&params.delta);
    let ss = compensated_sum(params.delta.iter().map(|d| (d - mean) * (d - mean)));
    if ss <= 0.0 {
        return Err(ModelError::DegenerateDrift);
    }
    Ok(1.0 / ss)
}

/// Drift of the gap process, `γ_k = δ_{k+1} − δ_k`.
pub fn spacings_drift(params: &ModelParams) -> Vec<f64> {
    params.delta.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Covariance Ξ of the gap process: tridiagonal with diagonal `σ_k² + σ_{k+1}²`
/// and off-diagonal entries `−σ_{k+1}²` at `(k, k+1)` and `(k+1, k)`.
pub fn spacings_covariance(params: &ModelParams) -> DMatrix<f64> {
    let d = params.n - 1;
    let s2: Vec<f64> = params.sigma.iter().map(|s| s * s).collect();
    let mut xi = DMatrix::zeros(d, d);
    for a in 0..d {
        xi[(a, a)] = s2[a] + s2[a + 1];
        if a + 1 < d {
            xi[(a, a + 1)] = -s2[a + 1];
            xi[(a + 1, a)] = -s2[a + 1];
        }
    }
    xi
}

/// Reflection matrix R of size `d × d`: unit diagonal, −1/2 on both off-diagonals.
pub fn reflection_matrix(d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            1.0
        } else if i.abs_diff(j) == 1 {
            -0.5
        } else {
            0.0
        }
    })
}

/// Computes every derived constant for valid parameters.
pub fn derive(params: &ModelParams) -> Result<DerivedConstants, ModelError> {
    params.validate()?;
    let (alpha, stable) = compute_alphas(params);
    let at = alpha_tilde(params, &alpha);
    let mut derived = DerivedConstants {
        alpha,
        alpha_tilde: at,
        stable,
        lambda_n: lambda_n(params.n),
        beta: None,
        c_nu: None,
        c_p_centered: centered_poincare_constant(params).ok(),
        gamma: spacings_drift(params),
        xi: spacings_covariance(params),
        r: reflection_matrix(params.n - 1),
    };
    if stable {
        derived.beta = beta_constant(&derived).ok();
        derived.c_nu = poincare_constant_nu(&derived).ok();
    }
    Ok(derived)
}

/// Choice of square root Σ with `ΣΣ′ = Ξ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RootKind {
    /// Lower-triangular Cholesky factor.
    #[default]
    Cholesky,
    /// Symmetric positive definite square root.
    Symmetric,
}

/// Decomposition `ℜ = N + Q` of the transformed reflection matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewDecomposition {
    pub sigma_root: DMatrix<f64>,
    pub n_matrix: DMatrix<f64>,
    pub q_matrix: DMatrix<f64>,
    /// `max |(N′Q + Q′N)_ij|`.
    pub residual: f64,
}

/// Skew-symmetry residual with the Cholesky root.
pub fn skew_symmetry_residual(params: &ModelParams) -> Result<SkewDecomposition, ModelError> {
    skew_decomposition(params, RootKind::Cholesky)
}

/// Skew-symmetry decomposition for a chosen square root of Ξ.
///
/// With `D = diag(Ξ)`, `N = Σ′D^{-1/2}` and the reflection columns scaled to
/// `R D^{1/2}` (so that each column's normal component is `Ξ_jj^{1/2}` along
/// the face normal), `ℜ = Σ^{-1} R D^{1/2}` and `Q = ℜ − N`. The condition
/// `N′Q + Q′N = 0` is equivalent to `2Ξ = RD + DR′`.
pub fn skew_decomposition(
    params: &ModelParams,
    root: RootKind,
) -> Result<SkewDecomposition, ModelError> {
    params.validate()?;
    let xi = spacings_covariance(params);
    let d = xi.nrows();
    let sigma_root = match root {
        RootKind::Cholesky => xi
            .clone()
            .cholesky()
            .ok_or(ModelError::FactorizationFailure)?
            .l(),
        RootKind::Symmetric => {
            let eig = SymmetricEigen::new(xi.clone());
            if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
                return Err(ModelError::FactorizationFailure);
            }
            let sq = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
            &eig.eigenvectors * sq * eig.eigenvectors.transpose()
        }
    };
    let sigma_inv = sigma_root
        .clone()
        .try_inverse()
        .ok_or(ModelError::FactorizationFailure)?;
    let diag: Vec<f64> = (0..d).map(|i| xi[(i, i)]).collect();
    let d_inv_sqrt = DMatrix::from_fn(d, d, |i, j| if i == j { diag[i].powf(-0.5) } else { 0.0 });
    let d_sqrt = DMatrix::from_fn(d, d, |i, j| if i == j { diag[i].sqrt() } else { 0.0 });
    let n_matrix = sigma_root.transpose() * d_inv_sqrt;
    let r = reflection_matrix(d);
    let q_matrix = &sigma_inv * r * d_sqrt - &n_matrix;
    let sym = n_matrix.transpose() * &q_matrix + q_matrix.transpose() * &n_matrix;
    let residual = sym.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    Ok(SkewDecomposition { sigma_root, n_matrix, q_matrix, residual })
}
