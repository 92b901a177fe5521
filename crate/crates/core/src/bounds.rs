//! Concentration bounds for additive functionals of the gap process.
//!
//! For a bounded `u` with `ν(u) = 0` and `Var_ν(u) = σ²`, started from `κ`,
//!
//! ```text
//! P( (1/t)∫_0^t u(Y_s) ds ≥ r )
//!   ≤ ‖dκ/dν‖₂ · exp[ −(t/β) · max( r²/δ(u)²,
//!          4ε(ε+σ²)(√(1 + r²/(2ε(ε+σ²)²‖u‖∞²)) − 1) ) ]
//! ```
//!
//! for every `ε > 0`. The same expression with `β` replaced by the centered
//! Poincaré constant `C_P` bounds occupation-time deviations of the centered
//! particle system.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{centered_poincare_constant, compute_alphas, ModelError, ModelParams};
use crate::numeric::{fit_line, sample_variance};
use crate::rng::{stream_rng, PathRng};
use crate::sim::{
    gaps_from_order, map_paths, simulate_observed, InitialState, SimConfig, SimError,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("need at least {need} paths, got {got}")]
    TooFewPaths { got: usize, need: usize },
    #[error("need at least 3 time points with positive variance, got {0}")]
    TooFewPoints(usize),
    #[error("rate rho[{index}] = {rho} must exceed alpha_tilde/2 = {half}")]
    Chi2Divergent { index: usize, rho: f64, half: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Inputs of the tail bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailBoundQuery {
    pub t: f64,
    pub r: f64,
    pub eps: f64,
    /// `Var_ν(u)`.
    pub sigma2: f64,
    /// `‖u‖∞`.
    pub u_inf: f64,
    /// `δ(u) = sup |u(x) − u(y)|`.
    pub u_range: f64,
    /// `β` for the gap process, `C_P` for the centered system.
    pub rate: f64,
    /// `‖dκ/dν‖₂`.
    pub chi2norm: f64,
}

impl TailBoundQuery {
    pub fn validate(&self) -> Result<(), BoundsError> {
        let positive = [
            ("t", self.t),
            ("r", self.r),
            ("eps", self.eps),
            ("u_inf", self.u_inf),
            ("u_range", self.u_range),
            ("rate", self.rate),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(BoundsError::InvalidQuery(format!("{name} = {v} must be positive")));
            }
        }
        if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return Err(BoundsError::InvalidQuery(format!(
                "sigma2 = {} must be nonnegative",
                self.sigma2
            )));
        }
        if !(self.chi2norm >= 1.0 && self.chi2norm.is_finite()) {
            return Err(BoundsError::InvalidQuery(format!(
                "chi2norm = {} must be at least 1",
                self.chi2norm
            )));
        }
        if self.u_range > 2.0 * self.u_inf * (1.0 + 1e-12) {
            return Err(BoundsError::InvalidQuery(format!(
                "u_range = {} exceeds 2 u_inf = {}",
                self.u_range,
                2.0 * self.u_inf
            )));
        }
        Ok(())
    }
}

/// Bound value before and after clamping to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundValue {
    pub raw: f64,
    pub clamped: f64,
}

impl BoundValue {
    fn new(raw: f64) -> Self {
        BoundValue { raw, clamped: raw.clamp(0.0, 1.0) }
    }
}

/// `4ε(ε+σ²)(√(1 + x) − 1)` with `x = r²/(2ε(ε+σ²)²‖u‖∞²)`, evaluated as
/// `2r²/((ε+σ²)‖u‖∞²(√(1+x) + 1))` to avoid cancellation for small `x`.
pub fn eps_branch(r: f64, eps: f64, sigma2: f64, u_inf: f64) -> f64 {
    let s = eps + sigma2;
    let x = r * r / (2.0 * eps * s * s * u_inf * u_inf);
    2.0 * r * r / (s * u_inf * u_inf * ((1.0 + x).sqrt() + 1.0))
}

/// The `max(…)` in the exponent.
pub fn tail_exponent(q: &TailBoundQuery) -> f64 {
    let gaussian = (q.r / q.u_range).powi(2);
    gaussian.max(eps_branch(q.r, q.eps, q.sigma2, q.u_inf))
}

fn bound_from_exponent(q: &TailBoundQuery, exponent: f64) -> BoundValue {
    BoundValue::new(q.chi2norm * (-(q.t / q.rate) * exponent).exp())
}

/// Tail bound at the query's `ε`.
pub fn theorem1_bound(q: &TailBoundQuery) -> Result<BoundValue, BoundsError> {
    q.validate()?;
    Ok(bound_from_exponent(q, tail_exponent(q)))
}

/// Log-spaced search range for `ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsGrid {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Default for EpsGrid {
    fn default() -> Self {
        EpsGrid { min: 1e-6, max: 1e3, points: 64 }
    }
}

impl EpsGrid {
    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.min];
        }
        let (a, b) = (self.min.ln(), self.max.ln());
        (0..self.points)
            .map(|i| (a + (b - a) * i as f64 / (self.points - 1) as f64).exp())
            .collect()
    }
}

/// Minimising `ε` and the resulting bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsOptimum {
    pub eps: f64,
    pub exponent: f64,
    pub bound: BoundValue,
}

/// Minimises the bound over `ε` (the query's own `ε` is ignored).
///
/// Only the second branch of the max depends on `ε`; it is maximised by a
/// log-grid scan followed by golden-section search on `log ε` around the best
/// grid point.
pub fn optimize_epsilon(q: &TailBoundQuery, grid: EpsGrid) -> Result<EpsOptimum, BoundsError> {
    let probe = TailBoundQuery { eps: 1.0, ..*q };
    probe.validate()?;
    if !(grid.min > 0.0 && grid.max >= grid.min && grid.points >= 1 && grid.max.is_finite()) {
        return Err(BoundsError::InvalidQuery(format!("bad eps grid {grid:?}")));
    }
    let h = |log_eps: f64| eps_branch(q.r, log_eps.exp(), q.sigma2, q.u_inf);
    let eps_values = grid.values();
    let (mut best_i, mut best) = (0, f64::NEG_INFINITY);
    for (i, e) in eps_values.iter().enumerate() {
        let v = eps_branch(q.r, *e, q.sigma2, q.u_inf);
        if v > best {
            best = v;
            best_i = i;
        }
    }
    let mut best_eps = eps_values[best_i];
    if eps_values.len() > 2 {
        let lo = eps_values[best_i.saturating_sub(1)].ln();
        let hi = eps_values[(best_i + 1).min(eps_values.len() - 1)].ln();
        let (s, v) = golden_max(h, lo, hi, 1e-12);
        if v > best {
            best = v;
            best_eps = s.exp();
        }
    }
    let exponent = (q.r / q.u_range).powi(2).max(best);
    Ok(EpsOptimum { eps: best_eps, exponent, bound: bound_from_exponent(q, exponent) })
}

/// Golden-section maximisation of a unimodal function on `[a, b]`.
fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc > fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Constants of the portfolio-versus-market bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Corollary1Bounds {
    /// `exp[(r + ν(ũ))t]`.
    pub c1_plus: f64,
    /// `exp[(r − ν(ũ))t]`.
    pub c1_minus: f64,
    /// The same `max(…)` as in the tail bound.
    pub c2: f64,
    /// `‖dκ/dν‖₂ exp(−t c2/β)`.
    pub upper_bound: BoundValue,
}

/// Corollary constants for the centered drift `u = ũ − ν(ũ)`; `q.rate` is `β`.
pub fn corollary1_bounds(nu_u_mean: f64, q: &TailBoundQuery) -> Result<Corollary1Bounds, BoundsError> {
    q.validate()?;
    if !nu_u_mean.is_finite() {
        return Err(BoundsError::InvalidQuery(format!("nu_u_mean = {nu_u_mean}")));
    }
    let c2 = tail_exponent(q);
    Ok(Corollary1Bounds {
        c1_plus: ((q.r + nu_u_mean) * q.t).exp(),
        c1_minus: ((q.r - nu_u_mean) * q.t).exp(),
        c2,
        upper_bound: bound_from_exponent(q, c2),
    })
}

/// Query for `u = 1{x_i = x_(j)} − 1/n` on the centered system:
/// `σ² = (n−1)/n²`, `δ(u) = 1`, `‖u‖∞ = 1 − 1/n`, rate `C_P`.
pub fn occupation_query(
    params: &ModelParams,
    t: f64,
    r: f64,
    eps: f64,
    chi2norm: f64,
) -> Result<TailBoundQuery, BoundsError> {
    params.validate()?;
    let (alpha, _) = compute_alphas(params);
    if let Some((index, &value)) = alpha.iter().enumerate().find(|(_, a)| **a <= 0.0) {
        return Err(ModelError::UnstableModel { index, value }.into());
    }
    let n = params.n as f64;
    Ok(TailBoundQuery {
        t,
        r,
        eps,
        sigma2: (n - 1.0) / (n * n),
        u_inf: 1.0 - 1.0 / n,
        u_range: 1.0,
        rate: centered_poincare_constant(params)?,
        chi2norm,
    })
}

/// Occupation-time deviation bound at a given `ε`.
pub fn occupation_bound(
    params: &ModelParams,
    t: f64,
    r: f64,
    eps: f64,
    chi2norm: f64,
) -> Result<BoundValue, BoundsError> {
    theorem1_bound(&occupation_query(params, t, r, eps, chi2norm)?)
}

/// One row of an empirical-versus-bound comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub r: f64,
    pub empirical: f64,
    pub bound: f64,
    /// Empirical frequency above the bound by more than 3 binomial standard errors.
    pub violation: bool,
}

/// Minimum number of per-path values accepted by [`empirical_tail_compare`].
pub const MIN_TAIL_PATHS: usize = 100;

/// Compares empirical frequencies of `{average ≥ r}` with the ε-optimised bound.
///
/// The standard error is that of a binomial proportion at the bound value,
/// `√(b(1−b)/N)`.
pub fn empirical_tail_compare(
    values: &[f64],
    r_grid: &[f64],
    template: &TailBoundQuery,
    grid: EpsGrid,
) -> Result<Vec<TailRow>, BoundsError> {
    if values.len() < MIN_TAIL_PATHS {
        return Err(BoundsError::TooFewPaths { got: values.len(), need: MIN_TAIL_PATHS });
    }
    let n = values.len() as f64;
    r_grid
        .iter()
        .map(|&r| {
            let opt = optimize_epsilon(&TailBoundQuery { r, ..*template }, grid)?;
            let bound = opt.bound.clamped;
            let empirical = values.iter().filter(|&&v| v >= r).count() as f64 / n;
            let se = (bound * (1.0 - bound) / n).sqrt();
            Ok(TailRow { r, empirical, bound, violation: empirical > bound + 3.0 * se })
        })
        .collect()
}

/// Log-log fit of the variance of time averages against the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceScaling {
    pub t: Vec<f64>,
    pub variance: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Fits `log Var = a + b log t` from per-horizon samples of time averages.
pub fn variance_slope(t_grid: &[f64], averages: &[Vec<f64>]) -> Result<VarianceScaling, BoundsError> {
    let variance: Vec<f64> = averages.iter().map(|a| sample_variance(a)).collect();
    let pts: Vec<(f64, f64)> = t_grid
        .iter()
        .zip(&variance)
        .filter(|(t, v)| **t > 0.0 && **v > 0.0)
        .map(|(t, v)| (t.ln(), v.ln()))
        .collect();
    if pts.len() < 3 || t_grid.len() != averages.len() {
        return Err(BoundsError::TooFewPoints(pts.len()));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    let fit = fit_line(&x, &y).ok_or(BoundsError::TooFewPoints(x.len()))?;
    Ok(VarianceScaling {
        t: t_grid.to_vec(),
        variance,
        slope: fit.slope,
        intercept: fit.intercept,
        r2: fit.r2,
    })
}

/// Settings for [`variance_scaling_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceExperiment {
    pub t_grid: Vec<f64>,
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
}

/// Simulates `n_paths` stationary paths per horizon, computes the time
/// average of `u(Y)` over `[0, t]` and fits the variance decay exponent.
///
/// Horizon `j` uses streams `j·n_paths .. (j+1)·n_paths` of the seed, so the
/// horizons are independent.
pub fn variance_scaling_check<U>(
    params: &ModelParams,
    u: U,
    exp: &VarianceExperiment,
    workers: Option<usize>,
) -> Result<VarianceScaling, BoundsError>
where
    U: Fn(&[f64]) -> f64 + Sync,
{
    if exp.t_grid.len() < 3 {
        return Err(BoundsError::TooFewPoints(exp.t_grid.len()));
    }
    if exp.n_paths < 2 {
        return Err(BoundsError::TooFewPaths { got: exp.n_paths, need: 2 });
    }
    let mut averages = Vec::with_capacity(exp.t_grid.len());
    for (j, &t) in exp.t_grid.iter().enumerate() {
        let config = SimConfig {
            dt: exp.dt,
            horizon: t,
            seed: exp.seed,
            record_stride: 1,
            initial_state: InitialState::SampleFromNu,
        };
        let base = (j * exp.n_paths) as u64;
        let res = map_paths(exp.n_paths, workers, |i| {
            let mut rng = stream_rng(exp.seed, base + i as u64);
            path_average(params, &config, &mut rng, &u)
        })?;
        averages.push(res.into_iter().collect::<Result<Vec<f64>, SimError>>()?);
    }
    variance_slope(&exp.t_grid, &averages)
}

/// Left-endpoint time average of `u(Y)` over the whole path.
pub fn path_average<U>(
    params: &ModelParams,
    config: &SimConfig,
    rng: &mut PathRng,
    u: &U,
) -> Result<f64, SimError>
where
    U: Fn(&[f64]) -> f64,
{
    let n_steps = config.n_steps();
    let mut gaps = vec![0.0; params.n.saturating_sub(1)];
    let mut acc = 0.0;
    simulate_observed(params, config, rng, |k, _, x, order| {
        if k < n_steps {
            gaps_from_order(x, order, &mut gaps);
            acc += u(&gaps);
        }
    })?;
    Ok(acc / n_steps as f64)
}

/// `‖dκ/dν‖₂ = Π_k ρ_k / √(α̃_k(2ρ_k − α̃_k))` for `κ = ⊗ Exp(ρ_k)`, `ν = ⊗ Exp(α̃_k)`.
pub fn chi2_norm_product_exponential(rho: &[f64], alpha_tilde: &[f64]) -> Result<f64, BoundsError> {
    if rho.len() != alpha_tilde.len() {
        return Err(BoundsError::InvalidQuery(format!(
            "rho has {} rates, alpha_tilde has {}",
            rho.len(),
            alpha_tilde.len()
        )));
    }
    let mut log_norm = 0.0;
    for (index, (&p, &a)) in rho.iter().zip(alpha_tilde).enumerate() {
        if a.is_nan() || a <= 0.0 {
            return Err(BoundsError::InvalidQuery(format!("alpha_tilde[{index}] = {a}")));
        }
        if p.is_nan() || p <= a / 2.0 {
            return Err(BoundsError::Chi2Divergent { index, rho: p, half: a / 2.0 });
        }
        log_norm += p.ln() - 0.5 * (a * (2.0 * p - a)).ln();
    }
    Ok(log_norm.exp())
}
