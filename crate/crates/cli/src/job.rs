//! Fully resolved experiment descriptions and their execution.
//!
//! A [`Job`] carries every input inline, so its JSON form is both the
//! parameter snapshot of a manifest and the input of a replay.

use rankflow::atlas::{mc_oracle_moment, moment, AtlasSpec};
use rankflow::bounds::{
    empirical_tail_compare, occupation_query, optimize_epsilon, theorem1_bound, EpsGrid,
    TailBoundQuery,
};
use rankflow::equilibrium::{
    fit_geometric_rate, tv_decay_series, NuSpec, TvExperiment, TvGrid,
};
use rankflow::io::{
    write_master_rows, write_moment_rows, write_series, write_tail_rows, write_trajectory,
    MomentRow,
};
use rankflow::lyapunov::{
    eps_limit, explicit_v, farkas_criterion, farkas_vector, verify_certificate,
};
use rankflow::model::{derive, reflection_matrix, skew_symmetry_residual, spacings_drift};
use rankflow::portfolio::{
    drift_moments, drift_range, simulate_relative_value, GeneratingFunction,
};
use rankflow::rng::stream_rng;
use rankflow::sim::{map_paths, simulate_observed, simulate_path};
use rankflow::{InitialState, ModelParams, SimConfig, SimError};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::CliError;

/// One named output file held in memory until it is written.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    fn csv(name: &str, write: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Self {
        let mut bytes = Vec::new();
        write(&mut bytes).expect("writing to memory cannot fail");
        Artifact { name: name.to_string(), bytes }
    }

    fn json(name: &str, value: &Value) -> Self {
        let mut bytes = serde_json::to_vec_pretty(value).expect("JSON values serialize");
        bytes.push(b'\n');
        Artifact { name: name.to_string(), bytes }
    }
}

/// Occupation-time experiment: particle `particle` holding rank `rank` (both
/// 1-based), started from ν.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationTail {
    pub params: ModelParams,
    pub particle: usize,
    pub rank: usize,
    pub horizon: f64,
    pub dt: f64,
    pub paths: usize,
    pub seed: u64,
    pub r_grid: Vec<f64>,
    pub eps_grid: EpsGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Job {
    Constants {
        params: ModelParams,
    },
    Simulate {
        params: ModelParams,
        config: SimConfig,
    },
    Stationary {
        params: ModelParams,
        experiment: TvExperiment,
    },
    Bounds {
        query: TailBoundQuery,
        optimize_eps: bool,
        eps_grid: EpsGrid,
    },
    Occupation(OccupationTail),
    Portfolio {
        params: ModelParams,
        generating_function: GeneratingFunction,
        dts: Vec<f64>,
        horizon: f64,
        paths: usize,
        seed: u64,
        initial_state: InitialState,
        nu_samples: usize,
    },
    Moments {
        specs: Vec<AtlasSpec>,
        orders: Vec<u32>,
        mc_draws: usize,
        seed: u64,
    },
    Lyapunov {
        params: ModelParams,
        v: Vec<f64>,
    },
}

impl Job {
    /// Master seed of stochastic jobs.
    pub fn seed(&self) -> Option<u64> {
        match self {
            Job::Simulate { config, .. } => Some(config.seed),
            Job::Stationary { experiment, .. } => Some(experiment.seed),
            Job::Occupation(o) => Some(o.seed),
            Job::Portfolio { seed, .. } | Job::Moments { seed, .. } => Some(*seed),
            Job::Constants { .. } | Job::Bounds { .. } | Job::Lyapunov { .. } => None,
        }
    }

    /// Runs the job; artifacts come back in a fixed order.
    pub fn run(&self, workers: Option<usize>) -> Result<Vec<Artifact>, CliError> {
        match self {
            Job::Constants { params } => Ok(vec![Artifact::json("constants.json", &constants(params)?)]),
            Job::Simulate { params, config } => {
                params.validate()?;
                let traj = simulate_path(params, config)?;
                Ok(vec![Artifact::csv("trajectory.csv", |w| write_trajectory(w, &traj))])
            }
            Job::Stationary { params, experiment } => stationary(params, experiment, workers),
            Job::Bounds { query, optimize_eps, eps_grid } => {
                Ok(vec![Artifact::json("bound.json", &bounds(query, *optimize_eps, *eps_grid)?)])
            }
            Job::Occupation(o) => occupation(o, workers),
            Job::Portfolio {
                params,
                generating_function,
                dts,
                horizon,
                paths,
                seed,
                initial_state,
                nu_samples,
            } => portfolio(
                params,
                generating_function,
                dts,
                *horizon,
                *paths,
                *seed,
                initial_state,
                *nu_samples,
                workers,
            ),
            Job::Moments { specs, orders, mc_draws, seed } => {
                moments(specs, orders, *mc_draws, *seed, workers)
            }
            Job::Lyapunov { params, v } => Ok(vec![Artifact::json("certificate.json", &lyapunov(params, v)?)]),
        }
    }
}

fn insert_opt(map: &mut Map<String, Value>, key: &str, value: Option<f64>) {
    if let Some(v) = value {
        map.insert(key.to_string(), json!(v));
    }
}

/// Derived constants; `beta` and `c_nu` are omitted for unstable models and
/// `c_p` for equal drifts.
pub fn constants(params: &ModelParams) -> Result<Value, CliError> {
    let d = derive(params)?;
    let skew = skew_symmetry_residual(params)?;
    let mut m = Map::new();
    m.insert("n".into(), json!(params.n));
    m.insert("delta".into(), json!(params.delta));
    m.insert("sigma".into(), json!(params.sigma));
    m.insert("alpha".into(), json!(d.alpha));
    m.insert("alpha_tilde".into(), json!(d.alpha_tilde));
    m.insert("stable".into(), json!(d.stable));
    m.insert("lambda_n".into(), json!(d.lambda_n));
    insert_opt(&mut m, "beta", d.beta);
    insert_opt(&mut m, "c_nu", d.c_nu);
    insert_opt(&mut m, "c_p", d.c_p_centered);
    m.insert("gamma".into(), json!(d.gamma));
    m.insert("skew_residual".into(), json!(skew.residual));
    Ok(Value::Object(m))
}

fn stationary(
    params: &ModelParams,
    exp: &TvExperiment,
    workers: Option<usize>,
) -> Result<Vec<Artifact>, CliError> {
    params.validate()?;
    let series = tv_decay_series(params, exp, workers)?;
    let spec = NuSpec::from_params(params)?;
    let floor = TvGrid::quantile(&spec, exp.boxes_per_axis)?.noise_floor(exp.n_paths);
    let fit = match fit_geometric_rate(&series.above_floor(floor)) {
        Ok(f) => json!({ "m": f.m, "zeta": f.zeta, "r2": f.r2 }),
        Err(e) => json!({ "error": e.to_string() }),
    };
    let tv = Artifact::csv("tv.csv", |w| write_series(w, "t,tv", &series.times, &series.tv));
    let fit = Artifact::json("tv_fit.json", &json!({ "noise_floor": floor, "fit": fit }));
    Ok(vec![tv, fit])
}

fn bounds(q: &TailBoundQuery, optimize: bool, grid: EpsGrid) -> Result<Value, CliError> {
    let at_eps = theorem1_bound(q)?;
    let mut out = json!({
        "query": q,
        "exponent_at_eps": rankflow::bounds::tail_exponent(q),
        "bound_at_eps": at_eps,
    });
    if optimize {
        let opt = optimize_epsilon(q, grid)?;
        out["optimized"] = json!(opt);
        out["bound"] = json!(opt.bound);
    } else {
        out["bound"] = json!(at_eps);
    }
    Ok(out)
}

fn occupation(o: &OccupationTail, workers: Option<usize>) -> Result<Vec<Artifact>, CliError> {
    let p = &o.params;
    p.validate()?;
    let n = p.n;
    if !(1..=n).contains(&o.particle) || !(1..=n).contains(&o.rank) {
        return Err(CliError::Usage(format!(
            "particle {} and rank {} must lie in 1..={n}",
            o.particle, o.rank
        )));
    }
    let template = occupation_query(p, o.horizon, o.r_grid.first().copied().unwrap_or(1.0), 1.0, 1.0)?;
    let config = SimConfig {
        dt: o.dt,
        horizon: o.horizon,
        seed: o.seed,
        record_stride: 1,
        initial_state: InitialState::SampleFromNu,
    };
    config.validate(n)?;
    let steps = config.n_steps();
    let (who, rank) = (o.particle - 1, o.rank - 1);
    let share = 1.0 / n as f64;
    let averages = map_paths(o.paths, workers, |i| {
        let mut acc = 0.0;
        simulate_observed(p, &config, &mut stream_rng(o.seed, i as u64), |k, _, _, order| {
            if k < steps {
                acc += if order[rank] == who { 1.0 } else { 0.0 } - share;
            }
        })
        .map(|_| acc / steps as f64)
    })?
    .into_iter()
    .collect::<Result<Vec<f64>, SimError>>()?;
    let rows = empirical_tail_compare(&averages, &o.r_grid, &template, o.eps_grid)?;
    Ok(vec![Artifact::csv("tail.csv", |w| write_tail_rows(w, &rows))])
}

#[allow(clippy::too_many_arguments)]
fn portfolio(
    params: &ModelParams,
    g: &GeneratingFunction,
    dts: &[f64],
    horizon: f64,
    paths: usize,
    seed: u64,
    initial_state: &InitialState,
    nu_samples: usize,
    workers: Option<usize>,
) -> Result<Vec<Artifact>, CliError> {
    params.validate()?;
    g.validate()?;
    let mut rows = Vec::with_capacity(dts.len() * paths);
    for &dt in dts {
        let per_path = map_paths(paths, workers, |i| {
            let path_seed = seed.wrapping_add(i as u64);
            let config = SimConfig {
                dt,
                horizon,
                seed: path_seed,
                record_stride: 1,
                initial_state: initial_state.clone(),
            };
            simulate_relative_value(params, g, &config, &mut stream_rng(path_seed, 0))
        })?;
        for r in per_path {
            rows.push(r?);
        }
    }
    let mut summary = json!({
        "generating_function": g,
        "drift_range": drift_range(g, params.n),
    });
    if nu_samples > 0 {
        let m = drift_moments(g, params, nu_samples, &mut stream_rng(seed, u64::MAX))?;
        summary["nu_mean"] = json!(m.mean.mean);
        summary["nu_mean_se"] = json!(m.mean.std_error);
        summary["nu_variance"] = json!(m.variance);
        summary["nu_samples"] = json!(nu_samples);
    }
    Ok(vec![
        Artifact::csv("master.csv", |w| write_master_rows(w, &rows)),
        Artifact::json("drift.json", &summary),
    ])
}

fn moments(
    specs: &[AtlasSpec],
    orders: &[u32],
    mc_draws: usize,
    seed: u64,
    workers: Option<usize>,
) -> Result<Vec<Artifact>, CliError> {
    let cases: Vec<(AtlasSpec, u32)> =
        specs.iter().flat_map(|s| orders.iter().map(move |&r| (*s, r))).collect();
    let rows = map_paths(cases.len(), workers, |i| {
        let (spec, r) = cases[i];
        let quadrature = moment(&spec, r)?;
        let (mc, mc_se) = if mc_draws > 0 {
            let m = mc_oracle_moment(&spec, r, mc_draws, &mut stream_rng(seed, i as u64))?;
            (m.mean, m.std_error)
        } else {
            (f64::NAN, f64::NAN)
        };
        Ok::<_, CliError>(MomentRow { spec, r, quadrature, mc, mc_se })
    })?
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    Ok(vec![Artifact::csv("moments.csv", |w| write_moment_rows(w, &rows))])
}

fn lyapunov(params: &ModelParams, v: &[f64]) -> Result<Value, CliError> {
    params.validate()?;
    let r = reflection_matrix(params.n - 1);
    let gamma = spacings_drift(params);
    let cert = verify_certificate(v, &r, &gamma)?;
    let mut out = serde_json::to_value(&cert).expect("certificate serializes");
    out["farkas_vector"] = json!(farkas_vector(&r, &gamma)?);
    out["farkas_criterion"] = json!(farkas_criterion(&r, &gamma)?);
    Ok(out)
}

/// The explicit candidate at `ε`, defaulting to half the admissible range.
pub fn default_certificate_vector(n: usize, eps: Option<f64>) -> Result<Vec<f64>, CliError> {
    let eps = eps.unwrap_or_else(|| 0.5 * eps_limit(n));
    Ok(explicit_v(n, eps)?)
}
