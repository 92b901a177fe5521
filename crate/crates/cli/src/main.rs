//! `rankflow`: experiment runner for rank-based diffusions.
//!
//! Every subcommand resolves its flags into a [`job::Job`], runs it, and writes
//! the outputs plus a `<stem>.manifest.json` beside each into `--out`.

mod error;
mod job;
mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rankflow::atlas::AtlasSpec;
use rankflow::bounds::{EpsGrid, TailBoundQuery};
use rankflow::equilibrium::TvExperiment;
use rankflow::portfolio::GeneratingFunction;
use rankflow::{InitialState, ModelParams, SimConfig};
use serde::de::DeserializeOwned;

use error::CliError;
use job::{Job, OccupationTail};

#[derive(Debug, Parser)]
#[command(name = "rankflow", version, about = "Rank-based diffusion experiments")]
struct Cli {
    /// Directory receiving outputs and manifests.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Derived constants of a parameter set (also printed to stdout).
    Constants {
        #[arg(long)]
        params: PathBuf,
    },
    /// One Euler path written as trajectory.csv.
    Simulate(SimulateArgs),
    /// Total-variation distance to the stationary law over time.
    Stationary(StationaryArgs),
    /// Tail bound for a query, or an empirical occupation-time comparison.
    Bounds(BoundsArgs),
    /// Master-formula decomposition and drift statistics of a portfolio.
    Portfolio(PortfolioArgs),
    /// Equilibrium moments of ranked weights in the Atlas model.
    Moments(MomentsArgs),
    /// Linear Lyapunov certificate and Farkas check.
    Lyapunov {
        #[arg(long)]
        params: PathBuf,
        /// Offset of the explicit candidate (default: half the admissible range).
        #[arg(long, conflicts_with = "v")]
        eps: Option<f64>,
        /// Candidate vector, overriding the explicit construction.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        v: Option<Vec<f64>>,
    },
    /// Re-runs the parameters of a manifest.
    Replay {
        manifest: PathBuf,
    },
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    params: PathBuf,
    /// SimConfig JSON; replaces the individual flags.
    #[arg(long, conflicts_with_all = ["dt", "horizon", "seed", "stride", "start"])]
    config: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    dt: Option<f64>,
    #[arg(long, required_unless_present = "config")]
    horizon: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// `zeros`, `nu`, or comma-separated positions.
    #[arg(long, default_value = "zeros", allow_hyphen_values = true)]
    start: String,
}

#[derive(Debug, Args)]
struct StationaryArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    dt: f64,
    /// Observation times (multiples of dt).
    #[arg(long, value_delimiter = ',', required = true)]
    times: Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    paths: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    boxes: usize,
    #[arg(long, default_value = "zeros", allow_hyphen_values = true)]
    start: String,
}

#[derive(Debug, Args)]
struct BoundsArgs {
    /// TailBoundQuery JSON.
    #[arg(long, required_unless_present = "occupation", conflicts_with = "occupation")]
    query: Option<PathBuf>,
    /// Minimise the bound over ε.
    #[arg(long)]
    optimize_eps: bool,
    #[arg(long, default_value_t = 1e-6)]
    eps_min: f64,
    #[arg(long, default_value_t = 1e3)]
    eps_max: f64,
    #[arg(long, default_value_t = 64)]
    eps_points: usize,
    /// Simulate occupation-time averages from ν and compare with the bound.
    #[arg(long, requires_all = ["params", "horizon", "dt", "r_grid"])]
    occupation: bool,
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    particle: usize,
    #[arg(long, default_value_t = 1)]
    rank: usize,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    paths: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_delimiter = ',')]
    r_grid: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Diversity,
    QuadraticGini,
    Renyi,
    Entropy,
    EqualWeight,
}

#[derive(Debug, Args)]
struct PortfolioArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long, value_enum)]
    kind: Kind,
    /// Exponent of the diversity and Rényi functions.
    #[arg(long, allow_hyphen_values = true)]
    p: Option<f64>,
    /// One or more step sizes.
    #[arg(long, value_delimiter = ',', required = true)]
    dt: Vec<f64>,
    #[arg(long)]
    horizon: f64,
    #[arg(long, default_value_t = 1)]
    paths: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "nu", allow_hyphen_values = true)]
    start: String,
    /// Draws from ν for the drift mean and variance (0 skips).
    #[arg(long, default_value_t = 0)]
    nu_samples: usize,
}

#[derive(Debug, Args)]
struct MomentsArgs {
    #[arg(long)]
    n: usize,
    /// Rank (1 = smallest weight); all ranks when omitted.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    delta: f64,
    /// Moment orders.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    r: Vec<u32>,
    /// Monte Carlo draws for the comparison columns (0 leaves them NaN).
    #[arg(long, default_value_t = 100_000)]
    mc_draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::parse(path, &e))
}

fn read_params(path: &Path) -> Result<ModelParams, CliError> {
    let p: ModelParams = read_json(path)?;
    p.validate()?;
    Ok(p)
}

fn parse_start(s: &str, n: usize) -> Result<InitialState, CliError> {
    match s {
        "zeros" => Ok(InitialState::Positions(vec![0.0; n])),
        "nu" => Ok(InitialState::SampleFromNu),
        list => list
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map(InitialState::Positions)
            .map_err(|e| CliError::Usage(format!("bad --start {list:?}: {e}"))),
    }
}

fn generating_function(kind: Kind, p: Option<f64>) -> Result<GeneratingFunction, CliError> {
    let need_p = || p.ok_or_else(|| CliError::Usage("--p is required for this --kind".into()));
    Ok(match kind {
        Kind::Diversity => GeneratingFunction::Diversity { p: need_p()? },
        Kind::QuadraticGini => GeneratingFunction::QuadraticGini,
        Kind::Renyi => GeneratingFunction::Renyi { p: need_p()? },
        Kind::Entropy => GeneratingFunction::Entropy,
        Kind::EqualWeight => GeneratingFunction::EqualWeight,
    })
}

/// `RANKFLOW_THREADS` caps the worker count.
fn workers() -> Result<Option<usize>, CliError> {
    match std::env::var("RANKFLOW_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&w| w > 0)
            .map(Some)
            .ok_or_else(|| CliError::Usage(format!("RANKFLOW_THREADS = {v:?} is not a positive integer"))),
        Err(_) => Ok(None),
    }
}

fn resolve(command: Command) -> Result<Job, CliError> {
    Ok(match command {
        Command::Constants { params } => Job::Constants { params: read_params(&params)? },
        Command::Simulate(a) => {
            let params = read_params(&a.params)?;
            let config = match &a.config {
                Some(path) => read_json::<SimConfig>(path)?,
                None => SimConfig {
                    dt: a.dt.expect("required by clap"),
                    horizon: a.horizon.expect("required by clap"),
                    seed: a.seed,
                    record_stride: a.stride,
                    initial_state: parse_start(&a.start, params.n)?,
                },
            };
            Job::Simulate { params, config }
        }
        Command::Stationary(a) => {
            let params = read_params(&a.params)?;
            let experiment = TvExperiment {
                initial_state: parse_start(&a.start, params.n)?,
                times: a.times,
                n_paths: a.paths,
                dt: a.dt,
                seed: a.seed,
                boxes_per_axis: a.boxes,
            };
            Job::Stationary { params, experiment }
        }
        Command::Bounds(a) => {
            let eps_grid = EpsGrid { min: a.eps_min, max: a.eps_max, points: a.eps_points };
            if a.occupation {
                Job::Occupation(OccupationTail {
                    params: read_params(a.params.as_deref().expect("required by clap"))?,
                    particle: a.particle,
                    rank: a.rank,
                    horizon: a.horizon.expect("required by clap"),
                    dt: a.dt.expect("required by clap"),
                    paths: a.paths,
                    seed: a.seed,
                    r_grid: a.r_grid.expect("required by clap"),
                    eps_grid,
                })
            } else {
                let query: TailBoundQuery = read_json(a.query.as_deref().expect("required by clap"))?;
                Job::Bounds { query, optimize_eps: a.optimize_eps, eps_grid }
            }
        }
        Command::Portfolio(a) => {
            let params = read_params(&a.params)?;
            Job::Portfolio {
                generating_function: generating_function(a.kind, a.p)?,
                dts: a.dt,
                horizon: a.horizon,
                paths: a.paths,
                seed: a.seed,
                initial_state: parse_start(&a.start, params.n)?,
                nu_samples: a.nu_samples,
                params,
            }
        }
        Command::Moments(a) => {
            let ks: Vec<usize> = match a.k {
                Some(k) => vec![k],
                None => (1..=a.n).collect(),
            };
            let specs = ks
                .into_iter()
                .map(|k| AtlasSpec::new(a.n, k, a.delta))
                .collect::<Result<Vec<_>, _>>()?;
            Job::Moments { specs, orders: a.r, mc_draws: a.mc_draws, seed: a.seed }
        }
        Command::Lyapunov { params, eps, v } => {
            let params = read_params(&params)?;
            let v = match v {
                Some(v) => v,
                None => job::default_certificate_vector(params.n, eps)?,
            };
            Job::Lyapunov { params, v }
        }
        Command::Replay { .. } => unreachable!("handled before resolution"),
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    let workers = workers()?;
    let (job, out) = match cli.command {
        Command::Replay { manifest } => {
            let m = manifest::load(&manifest)?;
            (m.parameters, cli.out)
        }
        command => (resolve(command)?, cli.out),
    };
    let written = manifest::execute(&job, &out, workers)?;
    if let Job::Constants { params } = &job {
        let value = job::constants(params)?;
        println!("{}", serde_json::to_string_pretty(&value).expect("JSON values serialize"));
    }
    for path in written {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
