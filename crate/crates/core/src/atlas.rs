//! Equilibrium moments of ranked market weights in the Atlas model.
//!
//! With `α = 2δ/n` and `β̄ ~ Beta(n−k+1, k)`,
//!
//! ```text
//! τ(θ) = E[exp(−θ/μ_(k))] = e^{−θ} φ_α(θ)^{n−k} E[ψ_β̄(θ)^{k−1}],
//! E[μ_(k)^r] = 1/(r−1)! ∫_0^∞ θ^{r−1} τ(θ) dθ,
//! ```
//!
//! where `φ_α` is the Laplace transform of `e^W`, `W ~ Exp(α)`, and `ψ_b` that
//! of `(b/((1−b)V + b))^{1/α}`, `V ~ Uniform(0, 1)`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;
use statrs::function::factorial::ln_factorial;
use thiserror::Error;

use crate::equilibrium::{sample_ranked_weights_atlas, EquilibriumError};
use crate::numeric::{mean_se, MeanSe};
use crate::quad::{integrate, GaussLegendre, QuadError, Tolerance};

/// Nodes of the fixed rule used for `ψ`.
pub const PSI_NODES: usize = 128;

const PHI_TOL: Tolerance = Tolerance::new(1e-13, 0.0);
const BETA_TOL: Tolerance = Tolerance::new(1e-11, 0.0);
const THETA_TOL: Tolerance = Tolerance::new(1e-11, 1e-9);
/// Bound on the neglected tail `∫_Θ^∞`.
const TAIL_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AtlasError {
    #[error("invalid Atlas spec: n = {n}, k = {k}, delta = {delta}")]
    InvalidSpec { n: usize, k: usize, delta: f64 },
    #[error("moment order must be >= 1")]
    InvalidOrder,
    #[error("need at least one draw")]
    NoDraws,
    #[error("{stage} quadrature did not converge: {source}")]
    QuadratureNotConverged {
        stage: &'static str,
        #[source]
        source: QuadError,
    },
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
}

/// Rank `k` (ascending, `k = n` is the largest weight) in an `n`-particle
/// Atlas model whose lowest particle has drift `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtlasSpec {
    pub n: usize,
    pub k: usize,
    pub delta: f64,
}

impl AtlasSpec {
    pub fn new(n: usize, k: usize, delta: f64) -> Result<Self, AtlasError> {
        let s = AtlasSpec { n, k, delta };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), AtlasError> {
        if self.n < 2 || self.k < 1 || self.k > self.n || !(self.delta > 0.0 && self.delta.is_finite())
        {
            return Err(AtlasError::InvalidSpec { n: self.n, k: self.k, delta: self.delta });
        }
        Ok(())
    }

    /// `α = 2δ/n`.
    pub fn alpha(&self) -> f64 {
        2.0 * self.delta / self.n as f64
    }
}

/// `φ_α(θ) = ∫_1^∞ α u^{−α−1} e^{−θu} du`, computed as `∫_0^1 exp(−θ s^{−1/α}) ds`.
pub fn phi_alpha(theta: f64, alpha: f64) -> f64 {
    match try_phi(theta, alpha) {
        Ok(v) => v,
        Err(QuadError::NotConverged { value, .. }) => value,
        Err(QuadError::NonFinite(_)) => f64::NAN,
    }
}

fn try_phi(theta: f64, alpha: f64) -> Result<f64, QuadError> {
    if theta == 0.0 {
        return Ok(1.0);
    }
    let inv = 1.0 / alpha;
    let f = |s: f64| if s <= 0.0 { 0.0 } else { (-theta * s.powf(-inv)).exp() };
    Ok(integrate(f, 0.0, 1.0, PHI_TOL)?.value)
}

/// `ψ_b(θ) = ∫_0^1 exp(−θ (b/((1−b)v + b))^{1/α}) dv` with a fixed Gauss rule.
pub fn psi(theta: f64, b: f64, alpha: f64) -> f64 {
    psi_with(&GaussLegendre::new(PSI_NODES), theta, b, alpha)
}

fn psi_with(rule: &GaussLegendre, theta: f64, b: f64, alpha: f64) -> f64 {
    if theta == 0.0 {
        return 1.0;
    }
    if b >= 1.0 {
        return (-theta).exp();
    }
    let inv = 1.0 / alpha;
    if b > 0.5 {
        let f = |v: f64| (-theta * (b / ((1.0 - b) * v + b)).powf(inv)).exp();
        return rule.integrate(f, 0.0, 1.0);
    }
    // w = log((1−b)v + b) spreads the transition near v ≈ b over [log b, 0].
    let f = |w: f64| (-theta * ((b.ln() - w) * inv).exp()).exp() * w.exp();
    rule.integrate(f, b.ln(), 0.0) / (1.0 - b)
}

/// `τ(θ)`, returning the best available estimate if an inner quadrature stalls.
pub fn tau(theta: f64, spec: &AtlasSpec) -> f64 {
    let rule = GaussLegendre::new(PSI_NODES);
    match tau_with(&rule, theta, spec) {
        Ok(v) => v,
        Err(AtlasError::QuadratureNotConverged {
            source: QuadError::NotConverged { value, .. },
            ..
        }) => value,
        Err(_) => f64::NAN,
    }
}

/// `τ(θ)` with convergence failures reported.
pub fn try_tau(theta: f64, spec: &AtlasSpec) -> Result<f64, AtlasError> {
    spec.validate()?;
    tau_with(&GaussLegendre::new(PSI_NODES), theta, spec)
}

fn tau_with(rule: &GaussLegendre, theta: f64, spec: &AtlasSpec) -> Result<f64, AtlasError> {
    if theta == 0.0 {
        return Ok(1.0);
    }
    let (n, k) = (spec.n, spec.k);
    let alpha = spec.alpha();
    let phi_factor = if k == n {
        1.0
    } else {
        try_phi(theta, alpha)
            .map_err(|source| AtlasError::QuadratureNotConverged { stage: "phi", source })?
            .powi((n - k) as i32)
    };
    let psi_factor = if k == 1 {
        1.0
    } else {
        // β̄ ~ Beta(n−k+1, k): density b^{n−k}(1−b)^{k−1}/B(n−k+1, k).
        let a = (n - k) as f64;
        let c = (k - 1) as f64;
        let ln_norm = ln_beta(a + 1.0, c + 1.0);
        let f = |b: f64| {
            if b <= 0.0 || b >= 1.0 {
                return 0.0;
            }
            let p = psi_with(rule, theta, b, alpha);
            if p <= 0.0 {
                return 0.0;
            }
            (a * b.ln() + c * (1.0 - b).ln() - ln_norm + c * p.ln()).exp()
        };
        integrate(f, 0.0, 1.0, BETA_TOL)
            .map_err(|source| AtlasError::QuadratureNotConverged { stage: "beta expectation", source })?
            .value
    };
    Ok((-theta).exp() * phi_factor * psi_factor)
}

/// Smallest `Θ` with `e^{−Θ} Σ_{j<r} Θ^j/j! < TAIL_TOL`, which bounds
/// `1/(r−1)! ∫_Θ^∞ θ^{r−1} τ(θ) dθ` because `τ(θ) ≤ e^{−θ}`.
fn theta_cutoff(r: u32) -> f64 {
    let tail = |big: f64| {
        let mut term = 1.0;
        let mut sum = 1.0;
        for j in 1..r {
            term *= big / j as f64;
            sum += term;
        }
        (-big).exp() * sum
    };
    let mut big = 1.0;
    while tail(big) >= TAIL_TOL {
        big += 1.0;
    }
    big
}

/// `E[μ_(k)^r]` by quadrature of the Laplace transform.
pub fn moment(spec: &AtlasSpec, r: u32) -> Result<f64, AtlasError> {
    spec.validate()?;
    if r == 0 {
        return Err(AtlasError::InvalidOrder);
    }
    let rule = GaussLegendre::new(PSI_NODES);
    let ln_fact = ln_factorial(r as u64 - 1);
    let big = theta_cutoff(r);
    let failure = std::cell::RefCell::new(None);
    let f = |theta: f64| match tau_with(&rule, theta, spec) {
        Ok(t) => {
            if theta == 0.0 {
                if r == 1 { t } else { 0.0 }
            } else {
                ((r - 1) as f64 * theta.ln() - ln_fact).exp() * t
            }
        }
        Err(e) => {
            failure.borrow_mut().get_or_insert(e);
            0.0
        }
    };
    let q = integrate(f, 0.0, big, THETA_TOL)
        .map_err(|source| AtlasError::QuadratureNotConverged { stage: "theta", source })?;
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(q.value)
}

/// Monte Carlo estimate of `E[μ_(k)^r]` from the exact stationary sampler.
pub fn mc_oracle_moment<R: Rng + ?Sized>(
    spec: &AtlasSpec,
    r: u32,
    n_draws: usize,
    rng: &mut R,
) -> Result<MeanSe, AtlasError> {
    spec.validate()?;
    if r == 0 {
        return Err(AtlasError::InvalidOrder);
    }
    if n_draws == 0 {
        return Err(AtlasError::NoDraws);
    }
    let mut values = Vec::with_capacity(n_draws);
    for _ in 0..n_draws {
        let w = sample_ranked_weights_atlas(spec.n, spec.delta, rng)?;
        values.push(w[spec.k - 1].powi(r as i32));
    }
    Ok(mean_se(&values).expect("nonempty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn spec_validation() {
        assert!(AtlasSpec::new(1, 1, 1.0).is_err());
        assert!(AtlasSpec::new(3, 0, 1.0).is_err());
        assert!(AtlasSpec::new(3, 4, 1.0).is_err());
        assert!(AtlasSpec::new(3, 2, 0.0).is_err());
        assert_eq!(AtlasSpec::new(4, 2, 1.0).unwrap().alpha(), 0.5);
    }

    #[test]
    fn phi_limits() {
        assert_eq!(phi_alpha(0.0, 0.7), 1.0);
        let vals: Vec<f64> = [0.1, 1.0, 5.0, 20.0].iter().map(|&t| phi_alpha(t, 0.7)).collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]));
        assert!(vals[3] < 1e-8);
    }

    #[test]
    fn phi_closed_form_for_unit_alpha() {
        // α = 1: ∫_1^∞ u^{−2} e^{−θu} du = e^{−θ} − θ E_1(θ); E_1(1) = 0.219383934395520...
        let e1 = 0.219_383_934_395_520_3;
        let expected = (-1.0f64).exp() - e1;
        assert!((phi_alpha(1.0, 1.0) - expected).abs() < 1e-12);
    }

    #[test]
    fn psi_limits() {
        assert_eq!(psi(0.0, 0.3, 1.0), 1.0);
        assert!((psi(2.0, 1.0 - 1e-12, 0.8) - (-2.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn psi_closed_form_for_unit_alpha() {
        // α = 1, b = ½: ratio 1/(1+v), ∫_0^1 e^{−θ/(1+v)} dv = ∫_{1/2}^1 e^{−θs} s^{−2} ds.
        let oracle = integrate(|s| (-s).exp() / (s * s), 0.5, 1.0, Tolerance::new(1e-14, 0.0))
            .unwrap()
            .value;
        assert!((psi(1.0, 0.5, 1.0) - oracle).abs() < 1e-13);
        // Small b goes through the log-scale branch.
        let b = 1e-4;
        let oracle = integrate(
            |v| (-(b / ((1.0 - b) * v + b)).powf(2.0)).exp(),
            0.0,
            1.0,
            Tolerance::new(1e-14, 0.0),
        )
        .unwrap()
        .value;
        assert!((psi(1.0, b, 0.5) - oracle).abs() < 1e-12);
    }

    #[test]
    fn tau_at_zero() {
        for k in 1..=4 {
            assert_eq!(tau(0.0, &AtlasSpec::new(4, k, 1.0).unwrap()), 1.0);
        }
    }

    #[test]
    fn cutoff_bounds_tail() {
        for r in 1..=4 {
            let big = theta_cutoff(r);
            assert!(big > 20.0 && big < 60.0);
        }
    }

    #[test]
    fn largest_of_two_has_mean_log_two() {
        // n = 2, δ = 1: μ_(2) = 1/(1 + e^{−ξ}), ξ ~ Exp(1), so E μ_(2) = ∫_0^1 du/(1+u).
        let s = AtlasSpec::new(2, 2, 1.0).unwrap();
        assert!((moment(&s, 1).unwrap() - 2f64.ln()).abs() < 1e-8);
    }

    #[test]
    fn order_zero_is_rejected() {
        let s = AtlasSpec::new(3, 1, 1.0).unwrap();
        assert_eq!(moment(&s, 0), Err(AtlasError::InvalidOrder));
        let mut rng = stream_rng(0, 0);
        assert_eq!(mc_oracle_moment(&s, 1, 0, &mut rng), Err(AtlasError::NoDraws));
    }
}
