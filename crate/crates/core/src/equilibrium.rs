//! Stationary law of the gaps and ergodicity measurements.
//!
//! Under equal increments of σ² the gaps have stationary law
//!
//! ```text
//! ν = ⊗_k Exp(α̃_k).
//! ```
//!
//! In the Atlas model the ranked market weights have the exact representation
//! `μ_(k) = e^{η_k} / Σ_j e^{η_j}` with `η_k = ξ_1 + … + ξ_{k−1}` and independent
//! `ξ_i ~ Exp(2δ(n−i)/n)`. Distance to ν is measured in total variation on a
//! grid of per-axis ν-quantile boxes.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{alpha_tilde, compute_alphas, ModelError, ModelParams};
use crate::numeric::{fit_line, softmax};
use crate::sim::{monte_carlo, InitialState, SimConfig, SimError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EquilibriumError {
    #[error("rates must be finite and positive, got {0:?}")]
    InvalidRates(Vec<f64>),
    #[error("Atlas sampler needs n >= 2 and delta > 0, got n = {n}, delta = {delta}")]
    InvalidAtlas { n: usize, delta: f64 },
    #[error("too few samples: {got} < {need} (10 per box)")]
    TooFewSamples { got: usize, need: usize },
    #[error("sample has dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("grid needs at least one box per axis")]
    InvalidGrid,
    #[error("need at least 4 positive points to fit a rate, got {0}")]
    TooFewPoints(usize),
    #[error("series is not decaying: fitted zeta = {zeta}")]
    NonDecaying { zeta: f64 },
    #[error("time {0} is not a multiple of dt")]
    OffGridTime(f64),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Product-exponential law with the given rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuSpec {
    pub rates: Vec<f64>,
}

impl NuSpec {
    pub fn new(rates: Vec<f64>) -> Result<Self, EquilibriumError> {
        if rates.is_empty() || rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(EquilibriumError::InvalidRates(rates));
        }
        Ok(NuSpec { rates })
    }

    /// Rates `α̃_k` of a stable model.
    pub fn from_params(params: &ModelParams) -> Result<Self, ModelError> {
        params.validate()?;
        let (alpha, _) = compute_alphas(params);
        if let Some((index, &value)) = alpha.iter().enumerate().find(|(_, a)| **a <= 0.0) {
            return Err(ModelError::UnstableModel { index, value });
        }
        Ok(NuSpec { rates: alpha_tilde(params, &alpha) })
    }

    pub fn dim(&self) -> usize {
        self.rates.len()
    }

    /// Coordinate means `1/α̃_k`.
    pub fn means(&self) -> Vec<f64> {
        self.rates.iter().map(|r| 1.0 / r).collect()
    }
}

/// One draw of independent exponentials with the spec's rates.
pub fn sample_nu<R: Rng + ?Sized>(spec: &NuSpec, rng: &mut R) -> Vec<f64> {
    spec.rates
        .iter()
        .map(|&r| Exp::new(r).expect("validated rate").sample(rng))
        .collect()
}

/// Ascending ranked market weights of the stationary Atlas model.
pub fn sample_ranked_weights_atlas<R: Rng + ?Sized>(
    n: usize,
    delta: f64,
    rng: &mut R,
) -> Result<Vec<f64>, EquilibriumError> {
    if n < 2 || !(delta > 0.0 && delta.is_finite()) {
        return Err(EquilibriumError::InvalidAtlas { n, delta });
    }
    let mut eta = Vec::with_capacity(n);
    eta.push(0.0);
    for i in 1..n {
        let rate = 2.0 * delta * (n - i) as f64 / n as f64;
        let xi = Exp::new(rate).expect("positive rate").sample(rng);
        eta.push(eta[i - 1] + xi);
    }
    Ok(softmax(&eta))
}

/// Per-axis boxes for the total-variation estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvGrid {
    /// Interior box edges for each axis, ascending; the last box is unbounded.
    pub edges: Vec<Vec<f64>>,
    /// Exact ν-probability of each box on each axis.
    pub probs: Vec<Vec<f64>>,
}

impl TvGrid {
    /// Boxes at the ν-quantiles `j/boxes` for `j = 1..boxes−1`, plus the overflow box.
    pub fn quantile(spec: &NuSpec, boxes_per_axis: usize) -> Result<Self, EquilibriumError> {
        if boxes_per_axis == 0 {
            return Err(EquilibriumError::InvalidGrid);
        }
        let b = boxes_per_axis as f64;
        let edges: Vec<Vec<f64>> = spec
            .rates
            .iter()
            .map(|&l| (1..boxes_per_axis).map(|j| -(-(j as f64) / b).ln_1p() / l).collect())
            .collect();
        Ok(TvGrid::from_edges(spec, edges))
    }

    /// Grid with arbitrary ascending interior edges; probabilities from the exponential CDF.
    pub fn from_edges(spec: &NuSpec, edges: Vec<Vec<f64>>) -> Self {
        let probs = spec
            .rates
            .iter()
            .zip(&edges)
            .map(|(&l, e)| {
                let mut lo = 0.0_f64;
                let mut p = Vec::with_capacity(e.len() + 1);
                for &hi in e {
                    p.push((-l * lo).exp() - (-l * hi).exp());
                    lo = hi;
                }
                p.push((-l * lo).exp());
                p
            })
            .collect();
        TvGrid { edges, probs }
    }

    pub fn dim(&self) -> usize {
        self.edges.len()
    }

    pub fn n_boxes(&self) -> usize {
        self.probs.iter().map(Vec::len).product()
    }

    /// Flat box index of a point.
    pub fn cell_index(&self, y: &[f64]) -> usize {
        let mut idx = 0;
        for (axis, e) in self.edges.iter().enumerate() {
            let j = e.partition_point(|&edge| edge <= y[axis]);
            idx = idx * (e.len() + 1) + j;
        }
        idx
    }

    /// Exact ν-probabilities of every box, in flat-index order.
    pub fn box_probabilities(&self) -> Vec<f64> {
        let mut out = vec![1.0];
        for p in &self.probs {
            out = out.iter().flat_map(|a| p.iter().map(move |b| a * b)).collect();
        }
        out
    }

    /// Expected TV of an exact sample of size `n_samples` (normal approximation).
    pub fn noise_floor(&self, n_samples: usize) -> f64 {
        let n = n_samples as f64;
        0.5 * self
            .box_probabilities()
            .iter()
            .map(|p| (2.0 * p * (1.0 - p) / (std::f64::consts::PI * n)).sqrt())
            .sum::<f64>()
    }
}

/// `½ Σ |p_i − q_i|`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Box-histogram total-variation distance between the samples and ν.
pub fn empirical_tv_to_nu(
    samples: &[Vec<f64>],
    spec: &NuSpec,
    grid: &TvGrid,
) -> Result<f64, EquilibriumError> {
    if grid.dim() != spec.dim() {
        return Err(EquilibriumError::DimensionMismatch { expected: spec.dim(), got: grid.dim() });
    }
    let need = 10 * grid.n_boxes();
    if samples.len() < need {
        return Err(EquilibriumError::TooFewSamples { got: samples.len(), need });
    }
    let mut counts = vec![0u64; grid.n_boxes()];
    for s in samples {
        if s.len() != spec.dim() {
            return Err(EquilibriumError::DimensionMismatch { expected: spec.dim(), got: s.len() });
        }
        counts[grid.cell_index(s)] += 1;
    }
    let total = samples.len() as f64;
    let freq: Vec<f64> = counts.iter().map(|&c| c as f64 / total).collect();
    Ok(tv_distance(&freq, &grid.box_probabilities()).min(1.0))
}

/// Total-variation distance to ν at a sequence of times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvSeries {
    pub times: Vec<f64>,
    pub tv: Vec<f64>,
    pub edges: Vec<Vec<f64>>,
}

impl TvSeries {
    /// Keeps only points whose TV exceeds `floor`.
    pub fn above_floor(&self, floor: f64) -> TvSeries {
        let (times, tv) = self
            .times
            .iter()
            .zip(&self.tv)
            .filter(|(_, v)| **v > floor)
            .map(|(t, v)| (*t, *v))
            .unzip();
        TvSeries { times, tv, edges: self.edges.clone() }
    }
}

/// Fit of `tv(t) ≈ M ζ^t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricFit {
    pub m: f64,
    pub zeta: f64,
    pub r2: f64,
}

/// Least squares of `log tv` on `t` over the points with positive TV.
pub fn fit_geometric_rate(series: &TvSeries) -> Result<GeometricFit, EquilibriumError> {
    let (t, l): (Vec<f64>, Vec<f64>) = series
        .times
        .iter()
        .zip(&series.tv)
        .filter(|(_, v)| **v > 0.0)
        .map(|(t, v)| (*t, v.ln()))
        .unzip();
    if t.len() < 4 {
        return Err(EquilibriumError::TooFewPoints(t.len()));
    }
    let fit = fit_line(&t, &l).ok_or(EquilibriumError::TooFewPoints(t.len()))?;
    let zeta = fit.slope.exp();
    if zeta >= 1.0 {
        return Err(EquilibriumError::NonDecaying { zeta });
    }
    Ok(GeometricFit { m: fit.intercept.exp(), zeta, r2: fit.r2 })
}

/// Settings for [`tv_decay_series`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvExperiment {
    pub initial_state: InitialState,
    pub times: Vec<f64>,
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub boxes_per_axis: usize,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Simulates `n_paths` paths and measures TV to ν of the gap law at each time.
pub fn tv_decay_series(
    params: &ModelParams,
    exp: &TvExperiment,
    workers: Option<usize>,
) -> Result<TvSeries, EquilibriumError> {
    let spec = NuSpec::from_params(params).map_err(SimError::from)?;
    let grid = TvGrid::quantile(&spec, exp.boxes_per_axis)?;
    let mut steps = Vec::with_capacity(exp.times.len());
    for &t in &exp.times {
        let k = (t / exp.dt).round();
        if k < 1.0 || (k * exp.dt - t).abs() > 1e-9 * t.max(1.0) {
            return Err(EquilibriumError::OffGridTime(t));
        }
        steps.push(k as usize);
    }
    let stride = steps.iter().fold(0, |g, &k| gcd(g, k));
    let horizon = exp.times.iter().copied().fold(0.0, f64::max);
    let config = SimConfig {
        dt: exp.dt,
        horizon,
        seed: exp.seed,
        record_stride: stride,
        initial_state: exp.initial_state.clone(),
    };
    let rows: Vec<usize> = steps.iter().map(|k| k / stride).collect();
    let per_path = monte_carlo(params, &config, exp.n_paths, workers, |_, traj| {
        rows.iter().map(|&r| traj.y.row(r).to_vec()).collect::<Vec<_>>()
    })?;
    let mut tv = Vec::with_capacity(rows.len());
    for j in 0..rows.len() {
        let samples: Vec<Vec<f64>> = per_path.iter().map(|p| p[j].clone()).collect();
        tv.push(empirical_tv_to_nu(&samples, &spec, &grid)?);
    }
    Ok(TvSeries { times: exp.times.clone(), tv, edges: grid.edges })
}
