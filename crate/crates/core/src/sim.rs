//! Euler–Maruyama simulation of the rank-based particle system.
//!
//! Positions are stepped directly,
//!
//! ```text
//! X_i ← X_i + δ_{rank(i)} Δt + σ_{rank(i)} √Δt Z_i,
//! ```
//!
//! and the gaps, ranks and market weights are derived from the positions at
//! every recorded step. Ties in rank go to the lower coordinate index.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::equilibrium::{sample_nu, NuSpec};
use crate::model::{ModelError, ModelParams};
use crate::numeric::softmax;
use crate::rng::{stream_rng, PathRng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("initial state has {got} coordinates, expected {expected}")]
    InitialStateLength { expected: usize, got: usize },
    #[error("empty averaging window [{t0}, {t1}]")]
    EmptyWindow { t0: f64, t1: f64 },
    #[error("window [{t0}, {t1}] is outside the recorded range [{start}, {end}]")]
    WindowOutOfRange { t0: f64, t1: f64, start: f64, end: f64 },
    #[error("need at least one path")]
    NoPaths,
    #[error("trajectory has no recorded steps")]
    EmptyTrajectory,
    #[error("failed to build worker pool: {0}")]
    WorkerPool(String),
}

/// Starting configuration of a path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InitialStateRepr", into = "InitialStateRepr")]
pub enum InitialState {
    /// Fixed positions `X(0)`.
    Positions(Vec<f64>),
    /// Gaps drawn from ν (requires a stable model), centered positions,
    /// labels assigned by a uniform random permutation.
    SampleFromNu,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum InitialStateRepr {
    Positions(Vec<f64>),
    Token(String),
}

const NU_TOKEN: &str = "sample_from_nu";

impl TryFrom<InitialStateRepr> for InitialState {
    type Error = String;
    fn try_from(r: InitialStateRepr) -> Result<Self, String> {
        match r {
            InitialStateRepr::Positions(v) => Ok(InitialState::Positions(v)),
            InitialStateRepr::Token(t) if t == NU_TOKEN => Ok(InitialState::SampleFromNu),
            InitialStateRepr::Token(t) => Err(format!("unknown initial state token {t:?}")),
        }
    }
}

impl From<InitialState> for InitialStateRepr {
    fn from(s: InitialState) -> Self {
        match s {
            InitialState::Positions(v) => InitialStateRepr::Positions(v),
            InitialState::SampleFromNu => InitialStateRepr::Token(NU_TOKEN.to_string()),
        }
    }
}

/// Discretisation and seeding of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    #[serde(default = "default_stride")]
    pub record_stride: usize,
    pub initial_state: InitialState,
}

fn default_stride() -> usize {
    1
}

impl SimConfig {
    /// Number of Euler steps, `round(horizon/dt)`.
    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn validate(&self, n: usize) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::InvalidConfig(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.horizon.is_finite() && self.dt < self.horizon) {
            return Err(SimError::InvalidConfig(format!(
                "need dt < horizon, got dt = {}, horizon = {}",
                self.dt, self.horizon
            )));
        }
        if self.record_stride == 0 {
            return Err(SimError::InvalidConfig("record_stride must be >= 1".into()));
        }
        if let InitialState::Positions(x) = &self.initial_state {
            if x.len() != n {
                return Err(SimError::InitialStateLength { expected: n, got: x.len() });
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(SimError::InvalidConfig("non-finite initial position".into()));
            }
        }
        Ok(())
    }
}

/// Row-major matrix that grows one row at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct Rows<T> {
    width: usize,
    data: Vec<T>,
}

impl<T: Copy> Rows<T> {
    pub fn new(width: usize) -> Self {
        Rows { width, data: Vec::new() }
    }

    pub fn with_capacity(width: usize, rows: usize) -> Self {
        Rows { width, data: Vec::with_capacity(width * rows) }
    }

    pub fn push(&mut self, row: &[T]) {
        debug_assert_eq!(row.len(), self.width);
        self.data.extend_from_slice(row);
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.width).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, k: usize) -> &[T] {
        &self.data[k * self.width..(k + 1) * self.width]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, T> {
        self.data.chunks_exact(self.width.max(1))
    }
}

/// Recorded path: positions, ranks (1-based), gaps and market weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub n: usize,
    pub times: Vec<f64>,
    pub x: Rows<f64>,
    pub ranks: Rows<u32>,
    pub y: Rows<f64>,
    pub mu: Rows<f64>,
}

impl Trajectory {
    fn new(n: usize, capacity: usize) -> Self {
        Trajectory {
            n,
            times: Vec::with_capacity(capacity),
            x: Rows::with_capacity(n, capacity),
            ranks: Rows::with_capacity(n, capacity),
            y: Rows::with_capacity(n - 1, capacity),
            mu: Rows::with_capacity(n, capacity),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Positions minus their mean at recorded step `k`.
    pub fn centered(&self, k: usize) -> Vec<f64> {
        let x = self.x.row(k);
        let m = x.iter().sum::<f64>() / x.len() as f64;
        x.iter().map(|v| v - m).collect()
    }

    /// Ascending ranked market weights at recorded step `k`.
    pub fn ranked_mu(&self, k: usize) -> Vec<f64> {
        let mut m = self.mu.row(k).to_vec();
        m.sort_by(f64::total_cmp);
        m
    }

    fn record(&mut self, t: f64, x: &[f64], order: &[usize], ranks: &mut [u32], gaps: &mut [f64]) {
        for (r, &i) in order.iter().enumerate() {
            ranks[i] = r as u32 + 1;
        }
        gaps_from_order(x, order, gaps);
        self.times.push(t);
        self.x.push(x);
        self.ranks.push(ranks);
        self.y.push(gaps);
        self.mu.push(&softmax(x));
    }
}

/// Sorts `order` so that `x[order[0]] ≤ x[order[1]] ≤ …`, ties by index.
pub fn rank_order(x: &[f64], order: &mut [usize]) {
    for (k, o) in order.iter_mut().enumerate() {
        *o = k;
    }
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
}

fn step_with_order(x: &mut [f64], order: &[usize], dt: f64, noise: &[f64], params: &ModelParams) {
    let sq = dt.sqrt();
    for (r, &i) in order.iter().enumerate() {
        x[i] += params.delta[r] * dt + params.sigma[r] * sq * noise[i];
    }
}

/// One Euler–Maruyama step from `state` with the given standard normals.
pub fn step(state: &[f64], dt: f64, noise: &[f64], params: &ModelParams) -> Vec<f64> {
    let mut order = vec![0; state.len()];
    rank_order(state, &mut order);
    let mut x = state.to_vec();
    step_with_order(&mut x, &order, dt, noise, params);
    x
}

/// Initial positions for a path, consuming randomness only for `SampleFromNu`.
pub fn initial_positions(
    params: &ModelParams,
    state: &InitialState,
    rng: &mut PathRng,
) -> Result<Vec<f64>, SimError> {
    match state {
        InitialState::Positions(x) => Ok(x.clone()),
        InitialState::SampleFromNu => {
            let spec = NuSpec::from_params(params)?;
            let gaps = sample_nu(&spec, rng);
            Ok(positions_from_gaps(&gaps, rng))
        }
    }
}

/// Centered ranked positions built from gaps, assigned to labels by a uniform
/// random permutation.
pub fn positions_from_gaps(gaps: &[f64], rng: &mut PathRng) -> Vec<f64> {
    let n = gaps.len() + 1;
    let mut z = Vec::with_capacity(n);
    z.push(0.0);
    for g in gaps {
        z.push(z[z.len() - 1] + g);
    }
    let m = z.iter().sum::<f64>() / n as f64;
    let mut labels: Vec<usize> = (0..n).collect();
    labels.shuffle(rng);
    let mut x = vec![0.0; n];
    for (r, &i) in labels.iter().enumerate() {
        x[i] = z[r] - m;
    }
    x
}

/// Simulates one path with stream 0 of `config.seed`.
pub fn simulate_path(params: &ModelParams, config: &SimConfig) -> Result<Trajectory, SimError> {
    let mut rng = stream_rng(config.seed, 0);
    simulate_with_rng(params, config, &mut rng)
}

/// Simulates one path drawing all randomness from `rng`.
pub fn simulate_with_rng(
    params: &ModelParams,
    config: &SimConfig,
    rng: &mut PathRng,
) -> Result<Trajectory, SimError> {
    params.validate()?;
    config.validate(params.n)?;
    let n = params.n;
    let n_steps = config.n_steps();
    let stride = config.record_stride.max(1);
    let mut traj = Trajectory::new(n, n_steps / stride + 2);
    let mut ranks = vec![0u32; n];
    let mut gaps = vec![0.0; n - 1];
    simulate_observed(params, config, rng, |k, t, x, order| {
        if k % stride == 0 || k == n_steps {
            traj.record(t, x, order, &mut ranks, &mut gaps);
        }
    })?;
    Ok(traj)
}

/// Runs one path and calls `observer(k, t_k, x, order)` at every step
/// `k = 0..=n_steps`, where `order` lists coordinates by ascending rank.
/// Nothing is stored; use this for long paths where only running
/// statistics are needed.
pub fn simulate_observed<O>(
    params: &ModelParams,
    config: &SimConfig,
    rng: &mut PathRng,
    mut observer: O,
) -> Result<(), SimError>
where
    O: FnMut(usize, f64, &[f64], &[usize]),
{
    params.validate()?;
    config.validate(params.n)?;
    let n = params.n;
    let n_steps = config.n_steps();
    let mut x = initial_positions(params, &config.initial_state, rng)?;
    let mut order = vec![0usize; n];
    let mut noise = vec![0.0; n];
    for k in 0..=n_steps {
        rank_order(&x, &mut order);
        observer(k, k as f64 * config.dt, &x, &order);
        if k == n_steps {
            break;
        }
        for z in noise.iter_mut() {
            *z = rng.sample(StandardNormal);
        }
        step_with_order(&mut x, &order, config.dt, &noise, params);
    }
    Ok(())
}

/// Gaps `X_(j+1) − X_(j)` given the rank order.
pub fn gaps_from_order(x: &[f64], order: &[usize], out: &mut [f64]) {
    for j in 0..out.len() {
        out[j] = x[order[j + 1]] - x[order[j]];
    }
}

/// Time average over `[t0, t1]` of a per-record quantity, using the
/// left-endpoint rule on the recorded grid.
pub fn window_average<F: Fn(usize) -> f64>(
    traj: &Trajectory,
    t0: f64,
    t1: f64,
    f: F,
) -> Result<f64, SimError> {
    if t0.is_nan() || t1.is_nan() || t1 <= t0 {
        return Err(SimError::EmptyWindow { t0, t1 });
    }
    let (start, end) = match (traj.times.first(), traj.times.last()) {
        (Some(&s), Some(&e)) => (s, e),
        _ => return Err(SimError::EmptyTrajectory),
    };
    let slack = 1e-9 * (end - start).abs().max(1.0);
    if t0 < start - slack || t1 > end + slack {
        return Err(SimError::WindowOutOfRange { t0, t1, start, end });
    }
    let mut acc = 0.0;
    for k in 0..traj.len() - 1 {
        let a = traj.times[k].max(t0);
        let b = traj.times[k + 1].min(t1);
        if b > a {
            acc += f(k) * (b - a);
        }
    }
    Ok(acc / (t1 - t0))
}

/// `(1/(t1−t0)) ∫_{t0}^{t1} u(Y(s)) ds` by the left-endpoint rule.
pub fn additive_functional<U: Fn(&[f64]) -> f64>(
    traj: &Trajectory,
    u: U,
    t0: f64,
    t1: f64,
) -> Result<f64, SimError> {
    window_average(traj, t0, t1, |k| u(traj.y.row(k)))
}

/// Rank-occupancy counts over the recorded steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationTally {
    /// `counts[i][j]`: steps at which coordinate i holds rank j+1.
    pub counts: Vec<Vec<u64>>,
    pub total: u64,
}

impl OccupationTally {
    pub fn fractions(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| row.iter().map(|&c| c as f64 / self.total as f64).collect())
            .collect()
    }
}

pub fn occupation_fractions(traj: &Trajectory) -> Result<OccupationTally, SimError> {
    if traj.is_empty() {
        return Err(SimError::EmptyTrajectory);
    }
    let n = traj.n;
    let mut counts = vec![vec![0u64; n]; n];
    for row in traj.ranks.iter() {
        for (i, &r) in row.iter().enumerate() {
            counts[i][r as usize - 1] += 1;
        }
    }
    Ok(OccupationTally { counts, total: traj.len() as u64 })
}

/// Evaluates `f(i)` for `i in 0..n_paths`, possibly in parallel, returning
/// results in index order.
pub fn map_paths<T, F>(n_paths: usize, workers: Option<usize>, f: F) -> Result<Vec<T>, SimError>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match workers {
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| SimError::WorkerPool(e.to_string()))?;
            Ok(pool.install(|| (0..n_paths).into_par_iter().map(&f).collect()))
        }
        None => Ok((0..n_paths).into_par_iter().map(&f).collect()),
    }
}

/// Simulates `n_paths` independent paths; path `i` uses stream `i` of the
/// master seed. The reducer maps each trajectory to a summary; summaries come
/// back in path-index order.
pub fn monte_carlo<T, F>(
    params: &ModelParams,
    config: &SimConfig,
    n_paths: usize,
    workers: Option<usize>,
    reducer: F,
) -> Result<Vec<T>, SimError>
where
    T: Send,
    F: Fn(usize, &Trajectory) -> T + Sync + Send,
{
    if n_paths == 0 {
        return Err(SimError::NoPaths);
    }
    params.validate()?;
    config.validate(params.n)?;
    if config.initial_state == InitialState::SampleFromNu {
        NuSpec::from_params(params)?;
    }
    let results = map_paths(n_paths, workers, |i| {
        let mut rng = stream_rng(config.seed, i as u64);
        simulate_with_rng(params, config, &mut rng).map(|t| reducer(i, &t))
    })?;
    results.into_iter().collect()
}
