//! Functionally generated portfolios in the rank-based market with unit volatilities.
//!
//! Market weights are `μ_i = e^{X_i}/Σ_j e^{X_j}`. A generating function `G`
//! defines the portfolio
//!
//! ```text
//! π_i = (D_i log G(μ) + 1 − Σ_j μ_j D_j log G(μ)) μ_i
//! ```
//!
//! whose value relative to the market satisfies
//!
//! ```text
//! log(V^π(t)/V^μ(t)) = log(G(μ(t))/G(μ(0))) + ∫_0^t 𝔤(s) ds,
//! 𝔤 = −1/(2G(μ)) Σ_{ij} D_{ij}G(μ) μ_i μ_j Σ_k (δ_ik − μ_k)(δ_jk − μ_k).
//! ```
//!
//! For permutation-invariant `G` the drift is a function `ũ` of the gaps
//! through the ranked weights `M(y)`.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::TailBoundQuery;
use crate::equilibrium::{sample_nu, NuSpec};
use crate::model::{beta_constant, derive, ModelError, ModelParams};
use crate::numeric::{compensated_sum, mean_se, softmax, MeanSe};
use crate::rng::PathRng;
use crate::sim::{simulate_observed, SimConfig, SimError};

/// Distance of `Σμ^p` from 1 below which the Rényi drift uses its vertex limit.
pub const RENYI_SERIES_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PortfolioError {
    #[error("point is not in the open simplex: {0}")]
    OffSimplex(String),
    #[error("invalid generating function parameter: {0}")]
    InvalidParameter(String),
    #[error("portfolio dynamics require unit volatilities")]
    NonUnitSigma,
    #[error("need at least one sample")]
    NoSamples,
    #[error("portfolio value became nonpositive at t = {0}")]
    NonPositiveWealth(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// The five generating functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratingFunction {
    /// `(Σ x_i^p)^{1/p}`, `0 < p < 1`.
    Diversity { p: f64 },
    /// `1 − ½ Σ (x_i − 1/n)²`.
    QuadraticGini,
    /// `(1−p)^{-1} log Σ x_i^p`, `p ≠ 1`.
    Renyi { p: f64 },
    /// `−Σ x_i log x_i`.
    Entropy,
    /// `(x_1 ⋯ x_n)^{1/n}`.
    EqualWeight,
}

impl GeneratingFunction {
    pub fn validate(&self) -> Result<(), PortfolioError> {
        match *self {
            GeneratingFunction::Diversity { p } if !(p > 0.0 && p < 1.0) => Err(
                PortfolioError::InvalidParameter(format!("diversity needs 0 < p < 1, got {p}")),
            ),
            GeneratingFunction::Renyi { p } if !p.is_finite() || p == 1.0 => Err(
                PortfolioError::InvalidParameter(format!("Renyi entropy needs p != 1, got {p}")),
            ),
            _ => Ok(()),
        }
    }

    /// Value of `G` at any point of the open positive orthant.
    pub fn value(&self, x: &[f64]) -> f64 {
        let n = x.len() as f64;
        match *self {
            GeneratingFunction::Diversity { p } => power_sum(x, p).powf(1.0 / p),
            GeneratingFunction::QuadraticGini => {
                1.0 - 0.5 * x.iter().map(|v| (v - 1.0 / n).powi(2)).sum::<f64>()
            }
            GeneratingFunction::Renyi { p } => power_sum(x, p).ln() / (1.0 - p),
            GeneratingFunction::Entropy => -x.iter().map(|v| v * v.ln()).sum::<f64>(),
            GeneratingFunction::EqualWeight => (x.iter().map(|v| v.ln()).sum::<f64>() / n).exp(),
        }
    }

    /// Gradient `D_i G`.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len() as f64;
        match *self {
            GeneratingFunction::Diversity { p } => {
                let s = power_sum(x, p);
                let c = s.powf(1.0 / p - 1.0);
                x.iter().map(|v| c * v.powf(p - 1.0)).collect()
            }
            GeneratingFunction::QuadraticGini => x.iter().map(|v| -(v - 1.0 / n)).collect(),
            GeneratingFunction::Renyi { p } => {
                let s = power_sum(x, p);
                x.iter().map(|v| p * v.powf(p - 1.0) / ((1.0 - p) * s)).collect()
            }
            GeneratingFunction::Entropy => x.iter().map(|v| -(v.ln() + 1.0)).collect(),
            GeneratingFunction::EqualWeight => {
                let g = self.value(x);
                x.iter().map(|v| g / (n * v)).collect()
            }
        }
    }

    /// Hessian `D_jk G`.
    pub fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let m = x.len();
        let n = m as f64;
        let kd = |j: usize, k: usize| if j == k { 1.0 } else { 0.0 };
        match *self {
            GeneratingFunction::Diversity { p } => {
                let s = power_sum(x, p);
                let a = (1.0 - p) * s.powf(1.0 / p - 2.0);
                let b = (p - 1.0) * s.powf(1.0 / p - 1.0);
                DMatrix::from_fn(m, m, |j, k| {
                    a * x[j].powf(p - 1.0) * x[k].powf(p - 1.0) + kd(j, k) * b * x[j].powf(p - 2.0)
                })
            }
            GeneratingFunction::QuadraticGini => DMatrix::from_fn(m, m, |j, k| -kd(j, k)),
            GeneratingFunction::Renyi { p } => {
                let s = power_sum(x, p);
                DMatrix::from_fn(m, m, |j, k| {
                    p * p / (p - 1.0) * x[j].powf(p - 1.0) * x[k].powf(p - 1.0) / (s * s)
                        - kd(j, k) * p * x[j].powf(p - 2.0) / s
                })
            }
            GeneratingFunction::Entropy => DMatrix::from_fn(m, m, |j, k| -kd(j, k) / x[j]),
            GeneratingFunction::EqualWeight => {
                let g = self.value(x);
                DMatrix::from_fn(m, m, |j, k| g / (n * x[j] * x[k]) * (1.0 / n - kd(j, k)))
            }
        }
    }
}

fn power_sum(x: &[f64], p: f64) -> f64 {
    compensated_sum(x.iter().map(|v| v.powf(p)))
}

fn check_simplex(x: &[f64]) -> Result<(), PortfolioError> {
    if x.is_empty() {
        return Err(PortfolioError::OffSimplex("empty vector".into()));
    }
    if let Some((i, v)) = x.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
        return Err(PortfolioError::OffSimplex(format!("entry {i} = {v}")));
    }
    let s = compensated_sum(x.iter().copied());
    if (s - 1.0).abs() > 1e-10 {
        return Err(PortfolioError::OffSimplex(format!("entries sum to {s}")));
    }
    Ok(())
}

pub fn g_value(g: &GeneratingFunction, x: &[f64]) -> Result<f64, PortfolioError> {
    g.validate()?;
    check_simplex(x)?;
    Ok(g.value(x))
}

pub fn g_gradient(g: &GeneratingFunction, x: &[f64]) -> Result<Vec<f64>, PortfolioError> {
    g.validate()?;
    check_simplex(x)?;
    Ok(g.gradient(x))
}

pub fn g_hessian(g: &GeneratingFunction, x: &[f64]) -> Result<DMatrix<f64>, PortfolioError> {
    g.validate()?;
    check_simplex(x)?;
    Ok(g.hessian(x))
}

/// Portfolio weights generated by `G` at market weights `μ`.
pub fn fgp_weights(g: &GeneratingFunction, mu: &[f64]) -> Result<Vec<f64>, PortfolioError> {
    g.validate()?;
    check_simplex(mu)?;
    Ok(weights_unchecked(g, mu))
}

fn weights_unchecked(g: &GeneratingFunction, mu: &[f64]) -> Vec<f64> {
    if let GeneratingFunction::EqualWeight = g {
        // D_i log G = 1/(n μ_i): the bracket collapses to 1/(n μ_i).
        return vec![1.0 / mu.len() as f64; mu.len()];
    }
    let gv = g.value(mu);
    let dlog: Vec<f64> = g.gradient(mu).iter().map(|d| d / gv).collect();
    let avg = compensated_sum(mu.iter().zip(&dlog).map(|(m, d)| m * d));
    mu.iter().zip(&dlog).map(|(m, d)| (d + 1.0 - avg) * m).collect()
}

/// Drift `𝔤` of the master formula at market weights `μ`.
pub fn drift_g(g: &GeneratingFunction, mu: &[f64]) -> Result<f64, PortfolioError> {
    g.validate()?;
    check_simplex(mu)?;
    Ok(drift_unchecked(g, mu))
}

fn drift_unchecked(g: &GeneratingFunction, mu: &[f64]) -> f64 {
    if let GeneratingFunction::Renyi { p } = *g {
        let s = power_sum(mu, p);
        if (s - 1.0).abs() < RENYI_SERIES_TOL {
            return renyi_vertex_limit(p);
        }
    }
    let n = mu.len();
    let s2 = compensated_sum(mu.iter().map(|m| m * m));
    let h = g.hessian(mu);
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            let c = if i == j { 1.0 } else { 0.0 } - mu[i] - mu[j] + s2;
            acc += h[(i, j)] * mu[i] * mu[j] * c;
        }
    }
    -acc / (2.0 * g.value(mu))
}

/// Limit of the Rényi drift as the largest weight tends to one.
fn renyi_vertex_limit(p: f64) -> f64 {
    if p < 1.0 {
        p * (1.0 - p)
    } else {
        0.0
    }
}

/// Ranked weights `M(y)`: `M_1 = [1 + Σ_k e^{y_1+…+y_k}]^{-1}`,
/// `M_k = e^{y_1+…+y_{k−1}} M_1`, evaluated in the log domain.
pub fn ranked_weights(y: &[f64]) -> Vec<f64> {
    let mut c = Vec::with_capacity(y.len() + 1);
    c.push(0.0);
    for v in y {
        c.push(c[c.len() - 1] + v);
    }
    softmax(&c)
}

/// Drift as a function of the gaps, via the closed form for each kind.
pub fn drift_u_tilde(g: &GeneratingFunction, y: &[f64]) -> Result<f64, PortfolioError> {
    g.validate()?;
    if let Some((i, v)) = y.iter().enumerate().find(|(_, v)| !(**v >= 0.0 && v.is_finite())) {
        return Err(PortfolioError::OffSimplex(format!("gap {i} = {v} must be >= 0")));
    }
    Ok(u_tilde_closed_form(g, &ranked_weights(y)))
}

fn u_tilde_closed_form(g: &GeneratingFunction, m: &[f64]) -> f64 {
    let n = m.len() as f64;
    let s2 = compensated_sum(m.iter().map(|v| v * v));
    match *g {
        GeneratingFunction::Diversity { p } => {
            let sp = power_sum(m, p);
            0.5 * (1.0 - p) * (1.0 - power_sum(m, 2.0 * p) / (sp * sp))
        }
        GeneratingFunction::QuadraticGini => {
            // s2 − 2s3 + s2² = Σ_i μ_i² [(1 − μ_i)² + Σ_{k≠i} μ_k²], summed termwise
            // so that it stays nonnegative near the vertices.
            let num = compensated_sum(
                m.iter().map(|v| v * v * ((1.0 - v).powi(2) + (s2 - v * v).max(0.0))),
            );
            let dev = compensated_sum(m.iter().map(|v| (v - 1.0 / n).powi(2)));
            num / (2.0 - dev)
        }
        GeneratingFunction::Renyi { p } => {
            let sp = power_sum(m, p);
            if (sp - 1.0).abs() < RENYI_SERIES_TOL {
                return renyi_vertex_limit(p);
            }
            let bracket = 1.0 - p + p * power_sum(m, 2.0 * p) / (sp * sp)
                - 2.0 * power_sum(m, p + 1.0) / sp
                + s2;
            p / (2.0 * sp.ln()) * bracket
        }
        GeneratingFunction::Entropy => {
            let h = -compensated_sum(m.iter().map(|v| v * v.ln()));
            (1.0 - s2) / (2.0 * h)
        }
        GeneratingFunction::EqualWeight => (n - 1.0) / (2.0 * n),
    }
}

/// Sup-norm and range substitutes for the centered drift `ũ − ν(ũ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftRange {
    pub u_inf: f64,
    pub u_range: f64,
}

/// Range-based constants for the portfolio bound. Diversity and Gini use the
/// upper end `U` of the drift's range with `‖u‖∞ → U`, `δ(u) → 2U`; Entropy uses
/// `U = sup_{m ∈ [1/n, 1)} (1 − m²)/(−2m log m)`. Rényi and equal weight have
/// no such constant.
pub fn drift_range(g: &GeneratingFunction, n: usize) -> Option<DriftRange> {
    let nf = n as f64;
    let upper = match *g {
        GeneratingFunction::Diversity { p } => (nf - 1.0) * (1.0 - p) / (2.0 * nf),
        GeneratingFunction::QuadraticGini => 2.0 / (2.0 - (1.0 - 1.0 / nf).powi(2)),
        GeneratingFunction::Entropy => entropy_drift_sup(n),
        GeneratingFunction::Renyi { .. } | GeneratingFunction::EqualWeight => return None,
    };
    Some(DriftRange { u_inf: upper, u_range: 2.0 * upper })
}

/// `sup_{m ∈ [1/n, 1)} (1 − m²)/(−2m log m)`, by a dense scan (the limit at
/// `m → 1` is 1).
pub fn entropy_drift_sup(n: usize) -> f64 {
    let lo = 1.0 / n as f64;
    let steps = 20_000;
    (0..steps)
        .map(|i| {
            let m = lo + (1.0 - lo) * i as f64 / steps as f64;
            (1.0 - m * m) / (-2.0 * m * m.ln())
        })
        .fold(1.0, f64::max)
}

/// Master-formula terms along one simulated path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MasterDecomposition {
    pub seed: u64,
    pub dt: f64,
    /// `log(V^π(t)/V^μ(t))` from step-by-step wealth integration.
    pub lhs: f64,
    /// `log(G(μ(t))/G(μ(0)))`.
    pub g_term: f64,
    /// Trapezoidal `∫ 𝔤 ds`.
    pub drift_integral: f64,
    pub residual: f64,
}

/// Simulates one path and evaluates both sides of the master formula.
///
/// Wealth is updated multiplicatively, `V ← V(1 + Σ π_i (e^{ΔX_i} − 1))`,
/// with weights taken at the start of each step.
pub fn simulate_relative_value(
    params: &ModelParams,
    g: &GeneratingFunction,
    config: &SimConfig,
    rng: &mut PathRng,
) -> Result<MasterDecomposition, PortfolioError> {
    params.validate()?;
    g.validate()?;
    if !params.has_unit_sigma() {
        return Err(PortfolioError::NonUnitSigma);
    }
    let n = params.n;
    let dt = config.dt;
    let mut prev_x = vec![0.0; n];
    let mut mu0 = Vec::new();
    let mut mu = vec![0.0; n];
    let mut pi = vec![0.0; n];
    let mut drift_prev = 0.0;
    let mut log_v_pi = 0.0;
    let mut log_v_mu = 0.0;
    let mut drift_integral = 0.0;
    let mut failure = None;
    simulate_observed(params, config, rng, |k, t, x, _| {
        if failure.is_some() {
            return;
        }
        if k > 0 {
            let (mut rp, mut rm) = (0.0, 0.0);
            for i in 0..n {
                let ret = (x[i] - prev_x[i]).exp_m1();
                rp += pi[i] * ret;
                rm += mu[i] * ret;
            }
            if rp <= -1.0 || rm <= -1.0 {
                failure = Some(t);
                return;
            }
            log_v_pi += rp.ln_1p();
            log_v_mu += rm.ln_1p();
        }
        mu = softmax(x);
        pi = weights_unchecked(g, &mu);
        let d = drift_unchecked(g, &mu);
        if k > 0 {
            drift_integral += 0.5 * dt * (drift_prev + d);
        } else {
            mu0 = mu.clone();
        }
        drift_prev = d;
        prev_x.copy_from_slice(x);
    })?;
    if let Some(t) = failure {
        return Err(PortfolioError::NonPositiveWealth(t));
    }
    let lhs = log_v_pi - log_v_mu;
    let g_term = (g.value(&mu) / g.value(&mu0)).ln();
    Ok(MasterDecomposition {
        seed: config.seed,
        dt,
        lhs,
        g_term,
        drift_integral,
        residual: lhs - g_term - drift_integral,
    })
}

/// Monte Carlo summary of `ũ` under ν.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftMoments {
    pub mean: MeanSe,
    /// Sample variance of `ũ`, an estimate of `Var_ν(ũ)`.
    pub variance: f64,
}

/// Estimates `ν(ũ)` and its standard error from `n_samples` draws of ν.
pub fn nu_mean_of_drift<R: Rng + ?Sized>(
    g: &GeneratingFunction,
    params: &ModelParams,
    n_samples: usize,
    rng: &mut R,
) -> Result<MeanSe, PortfolioError> {
    Ok(drift_moments(g, params, n_samples, rng)?.mean)
}

/// Mean, standard error and variance of `ũ` under ν.
pub fn drift_moments<R: Rng + ?Sized>(
    g: &GeneratingFunction,
    params: &ModelParams,
    n_samples: usize,
    rng: &mut R,
) -> Result<DriftMoments, PortfolioError> {
    g.validate()?;
    let spec = NuSpec::from_params(params)?;
    if n_samples == 0 {
        return Err(PortfolioError::NoSamples);
    }
    if let GeneratingFunction::EqualWeight = g {
        let c = u_tilde_closed_form(g, &vec![1.0 / params.n as f64; params.n]);
        let mean = MeanSe { mean: c, std_error: 0.0, count: n_samples };
        return Ok(DriftMoments { mean, variance: 0.0 });
    }
    let values: Vec<f64> = (0..n_samples)
        .map(|_| u_tilde_closed_form(g, &ranked_weights(&sample_nu(&spec, rng))))
        .collect();
    let mean = mean_se(&values).expect("nonempty");
    Ok(DriftMoments { mean, variance: crate::numeric::sample_variance(&values) })
}

/// Tail-bound query for the centered drift `ũ − ν(ũ)`, with `ν(ũ)` and
/// `Var_ν(ũ)` estimated from `n_samples` draws, range constants from
/// [`drift_range`] and rate `β`. Returns the query and the estimated `ν(ũ)`.
pub fn corollary1_query<R: Rng + ?Sized>(
    g: &GeneratingFunction,
    params: &ModelParams,
    t: f64,
    r: f64,
    eps: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<(TailBoundQuery, MeanSe), PortfolioError> {
    let range = drift_range(g, params.n).ok_or_else(|| {
        PortfolioError::InvalidParameter(format!("no range constant available for {g:?}"))
    })?;
    let moments = drift_moments(g, params, n_samples, rng)?;
    let beta = beta_constant(&derive(params)?)?;
    let q = TailBoundQuery {
        t,
        r,
        eps,
        sigma2: moments.variance,
        u_inf: range.u_inf,
        u_range: range.u_range,
        rate: beta,
        chi2norm: 1.0,
    };
    Ok((q, moments.mean))
}
