use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("non-finite value at {location}")]
    NonFinite { location: String },

    #[error("identifiability failure: {0}")]
    RankDeficient(String),

    #[error("zero pooled variance for {0}")]
    ZeroVariance(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("parameters outside the loss domain: {0}")]
    Domain(String),

    #[error("unsupported design: {0}")]
    UnsupportedDesign(String),

    #[error("need at least 2 finite draws, got {got}")]
    InsufficientDraws { got: usize },

    #[error("too many degenerate bootstrap replicates: {redraws} redraws exceed the budget of {budget}")]
    TooManyDegenerate { redraws: usize, budget: usize },

    #[error("insufficient groups: {groups} groups leave {df} residual degrees of freedom")]
    InsufficientGroups { groups: usize, df: i64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error in {file} at row {row}, column {column}: {message}")]
    Parse {
        file: String,
        row: usize,
        column: String,
        message: String,
    },

    #[error("group labels not present in both files: {}", .labels.join(", "))]
    GroupMismatch { labels: Vec<String> },

    #[error("optimizer did not converge: {0}")]
    NotConverged(String),

    #[error("i/o error: {0}")]
    Io(String),
}

/// Coarse failure class, used to pick process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Parse,
    Identifiability,
    Convergence,
    Other,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Other => 1,
            ErrorCategory::Config => 2,
            ErrorCategory::Parse => 3,
            ErrorCategory::Identifiability => 4,
            ErrorCategory::Convergence => 5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Config => "config",
            ErrorCategory::Parse => "parse",
            ErrorCategory::Identifiability => "identifiability",
            ErrorCategory::Convergence => "convergence",
            ErrorCategory::Other => "other",
        }
    }
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidConfig(_) | Error::InvalidWeights(_) => ErrorCategory::Config,
            Error::Parse { .. }
            | Error::NonFinite { .. }
            | Error::GroupMismatch { .. }
            | Error::InvalidSample(_) => ErrorCategory::Parse,
            Error::RankDeficient(_)
            | Error::ZeroVariance(_)
            | Error::TooManyDegenerate { .. }
            | Error::InsufficientGroups { .. }
            | Error::UnsupportedDesign(_) => ErrorCategory::Identifiability,
            Error::NotConverged(_) => ErrorCategory::Convergence,
            Error::Domain(_) | Error::InsufficientDraws { .. } | Error::Io(_) => {
                ErrorCategory::Other
            }
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
