//! Errors surfaced by the runner and their exit codes.

use std::path::PathBuf;

use rankflow::atlas::AtlasError;
use rankflow::bounds::BoundsError;
use rankflow::equilibrium::EquilibriumError;
use rankflow::lyapunov::LyapunovError;
use rankflow::portfolio::PortfolioError;
use rankflow::{ModelError, SimError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: line {line}, column {column}: {message}")]
    Parse { path: PathBuf, line: usize, column: usize, message: String },
    #[error("manifest {path}: config hash {stored} does not match parameters ({computed})")]
    ManifestMismatch { path: PathBuf, stored: String, computed: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error(transparent)]
    Portfolio(#[from] PortfolioError),
    #[error(transparent)]
    Atlas(#[from] AtlasError),
    #[error(transparent)]
    Lyapunov(#[from] LyapunovError),
}

impl CliError {
    /// Process exit status; see the README for the table.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Parse { .. } | CliError::ManifestMismatch { .. } => 3,
            CliError::Io { .. } => 4,
            CliError::Model(_) => 5,
            CliError::Sim(_) => 6,
            CliError::Bounds(_) => 7,
            CliError::Equilibrium(_) => 8,
            CliError::Portfolio(_) => 9,
            CliError::Atlas(_) => 10,
            CliError::Lyapunov(_) => 11,
        }
    }

    /// Name printed in front of the message.
    pub fn name(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "UsageError",
            CliError::Parse { .. } => "ParseError",
            CliError::ManifestMismatch { .. } => "ManifestMismatch",
            CliError::Io { .. } => "IoError",
            CliError::Model(_) => "ModelError",
            CliError::Sim(_) => "SimError",
            CliError::Bounds(_) => "BoundsError",
            CliError::Equilibrium(_) => "EquilibriumError",
            CliError::Portfolio(_) => "PortfolioError",
            CliError::Atlas(_) => "AtlasError",
            CliError::Lyapunov(_) => "LyapunovError",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, e: &serde_json::Error) -> Self {
        CliError::Parse {
            path: path.into(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}
