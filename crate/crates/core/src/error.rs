use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
    NoConvergence,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numeric => 4,
            ErrorClass::NoConvergence => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorClass::Config => "config",
            ErrorClass::Data => "data",
            ErrorClass::Numeric => "numeric",
            ErrorClass::NoConvergence => "no-convergence",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("singular matrix: pivot {pivot:e} below threshold {threshold:e}")]
    SingularMatrix { pivot: f64, threshold: f64 },

    #[error("singular Hessian: pivot {pivot:e}")]
    SingularHessian { pivot: f64 },

    #[error("non-finite value in {0}")]
    NonFiniteValue(String),

    #[error("non-finite gradient")]
    NonFiniteGradient,

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("refinement produced a non-finite state; last valid step index {last_valid_step}")]
    NonFiniteRefinement { last_valid_step: usize },

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid schedule parameters: {0}")]
    InvalidScheduleParams(String),

    #[error("degenerate cumulative alpha {alpha_bar:e} at step {t}")]
    DegenerateAlpha { t: usize, alpha_bar: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("branch {from}-{to} has zero impedance")]
    ZeroImpedanceBranch { from: usize, to: usize },

    #[error("Newton-Raphson did not converge after {iterations} iterations (mismatch {mismatch:e})")]
    NoConvergence { iterations: usize, mismatch: f64 },

    #[error("dataset infeasible: {failed} of {attempted} draws failed to solve")]
    DatasetInfeasible { failed: usize, attempted: usize },

    #[error("sampler stalled: acceptance rate {rate:e} over {proposals} proposals")]
    SamplerStalled { rate: f64, proposals: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidConfig(_) | Error::InvalidScheduleParams(_) => ErrorClass::Config,
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::Data(_)
            | Error::Io(_)
            | Error::Serialization(_)
            | Error::DimensionMismatch { .. }
            | Error::ZeroImpedanceBranch { .. } => ErrorClass::Data,
            Error::NoConvergence { .. } | Error::DatasetInfeasible { .. } => {
                ErrorClass::NoConvergence
            }
            Error::SingularMatrix { .. }
            | Error::SingularHessian { .. }
            | Error::NonFiniteValue(_)
            | Error::NonFiniteGradient
            | Error::NonFiniteLoss { .. }
            | Error::NonFiniteRefinement { .. }
            | Error::DegenerateAlpha { .. }
            | Error::SamplerStalled { .. } => ErrorClass::Numeric,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::InvalidConfig(e.to_string())
    }
}

pub(crate) fn ensure_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}

