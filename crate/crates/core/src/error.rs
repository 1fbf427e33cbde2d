use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input; `row` is the 1-based line number in the source, header included.
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("logistic fit did not converge after {iterations} iterations (score norm {score_norm:e})")]
    NonConvergence {
        iterations: usize,
        score_norm: f64,
        last_iterate: Vec<f64>,
    },

    #[error(
        "complete or quasi-complete separation in column {column} (|coef| = {magnitude:.2}); \
         consider a ridge penalty"
    )]
    Separation { column: String, magnitude: f64 },

    #[error("empty stratum: {0}")]
    EmptyStratum(String),

    #[error("hazard undefined at week {0}: no survivor mass")]
    UndefinedHazard(u32),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("effect fit: {0}")]
    Effect(String),

    #[error("bootstrap unreliable: {failed} of {total} replicates failed")]
    BootstrapFailures { failed: usize, total: usize },

    #[error("oracle: {0}")]
    Oracle(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn is_input_error(&self) -> bool {
        matches!(self, Error::Parse { .. } | Error::Csv(_))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Config(_) => "config",
            Error::Contract(_) => "contract",
            Error::NonConvergence { .. } => "non_convergence",
            Error::Separation { .. } => "separation",
            Error::EmptyStratum(_) => "empty_stratum",
            Error::UndefinedHazard(_) => "undefined_hazard",
            Error::NonFinite(_) => "non_finite",
            Error::Effect(_) => "effect",
            Error::BootstrapFailures { .. } => "bootstrap",
            Error::Oracle(_) => "oracle",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
