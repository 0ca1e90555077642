use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// A single point of a residual sweep over candidate constraint times.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SweepPoint {
    pub t_i: f64,
    pub residual: f64,
    pub cost: f64,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("structural error: {0}")]
    Structure(String),

    #[error("observation {index} maps outside the state grid (value {value})")]
    OutOfRange { index: usize, value: f64 },

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("constraint time {t_i} is within {margin} s of a horizon endpoint")]
    Conditioning { t_i: f64, margin: f64 },

    #[error("linear solver failed: {0}")]
    Singular(String),

    #[error("no feasible constraint time: {reason}")]
    Infeasible {
        reason: String,
        sweep: Vec<SweepPoint>,
    },

    #[error("config error in field `{field}`{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Config {
        field: String,
        line: Option<usize>,
        message: String,
    },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            line: None,
            message: message.into(),
        }
    }

    /// True for errors the CLI reports with the infeasibility exit code.
    pub fn is_infeasible(&self) -> bool {
        matches!(self, Error::Infeasible { .. })
    }
}
