use std::path::PathBuf;

use thiserror::Error;

/// Errors raised while building networks, loading inputs or running simulations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no nodes")]
    NoNodes,

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("airport {airport} has zero polygon population but node {node} is assigned to it")]
    EmptyPolygon { airport: usize, node: usize },

    #[error("total population is zero")]
    ZeroPopulation,

    #[error(
        "epidemic step unstable at period {period}: node {node} {compartment} = {value:e} is outside [0,1]"
    )]
    Unstable {
        period: usize,
        node: usize,
        compartment: &'static str,
        value: f64,
    },

    #[error("runs were produced by different scenarios: {0}")]
    ScenarioMismatch(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },

    #[error("output directory {} is not empty; pass --overwrite to replace its contents", .0.display())]
    OutputExists(PathBuf),
}

impl Error {
    /// Process exit code: 2 for numerical instability, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Unstable { .. } => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
