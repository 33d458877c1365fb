use std::path::PathBuf;

/// Coarse failure class, used by the command line to choose an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad input data: malformed records, out-of-range values, degenerate samples.
    Data,
    /// Bad configuration: invalid scale, impossible parameters.
    Config,
    /// The trainer oracle failed or returned something unusable.
    Oracle,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("score {value} is outside the scale [{min}, {max}]")]
    OutOfRange { value: f64, min: f64, max: f64 },

    #[error("frequencies must sum to 1 (got {sum})")]
    NotNormalized { sum: f64 },

    #[error("malformed logits: {0}")]
    MalformedLogits(String),

    #[error("degenerate sample: {0}")]
    Degenerate(String),

    #[error("missing dimension '{0}' in description ratings")]
    MissingDimension(String),

    #[error("{path}:{line}: {message}")]
    Record {
        path: String,
        line: usize,
        message: String,
    },

    #[error("infeasible request: {0}")]
    Infeasible(String),

    #[error("rank-deficient fit: {0}")]
    RankDeficient(String),

    #[error("join produced no matching ids ({unmatched_left} unmatched predictions, {unmatched_right} unmatched ground-truth rows)")]
    EmptyJoin {
        unmatched_left: usize,
        unmatched_right: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(
        "oracle command exited with {status}\n--- stdout ---\n{stdout}\n--- stderr ---\n{stderr}"
    )]
    OracleExit {
        status: String,
        stdout: String,
        stderr: String,
    },

    #[error("oracle command timed out after {seconds}s\n--- stderr ---\n{stderr}")]
    OracleTimeout { seconds: f64, stderr: String },

    #[error("oracle result file {0} was not written")]
    OracleMissingResult(PathBuf),

    #[error("oracle result file {path} is invalid: {message}")]
    OracleInvalidResult { path: PathBuf, message: String },

    #[error("oracle failed: {0}")]
    Oracle(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Config,
            Error::OracleExit { .. }
            | Error::OracleTimeout { .. }
            | Error::OracleMissingResult(_)
            | Error::OracleInvalidResult { .. }
            | Error::Oracle(_) => ErrorClass::Oracle,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn record(path: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Record {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}

/// A non-fatal problem with one input record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
