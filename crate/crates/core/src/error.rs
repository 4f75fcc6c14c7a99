use std::path::PathBuf;

use thiserror::Error;

use crate::precoder_admm::AdmmDiagnostics;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    /// QoS slack `ln2 (log2 q_k - R_min)` is not positive for `user`.
    #[error("QoS slack is not positive for user {user} (epsilon = {epsilon:e})")]
    QosInfeasible { user: usize, epsilon: f64 },

    /// The rate floor cannot be met within the power budget; `user` is the
    /// first user (in decoding order) whose minimum power breaks the budget.
    #[error("power budget cannot meet the rate floor (binding user {user}): {detail}")]
    PowerInfeasible { user: usize, detail: String },

    #[error("ADMM did not converge after {} outer iterations", .diagnostics.iterations.len())]
    NonConvergence { diagnostics: Box<AdmmDiagnostics> },

    #[error("linear system is singular: {0}")]
    Singular(&'static str),

    /// An oracle was asked to work beyond its brute-force budget.
    #[error("oracle refused: {0}")]
    OracleRefused(String),

    #[error("unknown scheme `{0}`")]
    UnknownScheme(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            actual,
        })
    }
}
