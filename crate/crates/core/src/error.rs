use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    /// An argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid model or run configuration; `key` names the offending entry.
    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    /// A frequency integral that does not converge at ω → 0.
    #[error("divergent integral `{integral}`: {diagnostic}")]
    DivergentIntegral { integral: String, diagnostic: String },

    /// Time propagation produced a non-finite state or lost trace.
    #[error("integration failed after t = {last_good_time_fs} fs: {reason}")]
    IntegrationFailure { last_good_time_fs: f64, reason: String },

    /// Assumptions of a specialised code path are not met.
    #[error("model assumption violated: {0}")]
    Model(String),

    /// Oracle problem size above its configured bound.
    #[error("dimension {dimension} exceeds the bound {bound}")]
    DimensionBound { dimension: usize, bound: usize },
}

impl Error {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config { key: key.into(), reason: reason.into() }
    }

    /// Short machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Config { .. } => "config",
            Error::DivergentIntegral { .. } => "divergent_integral",
            Error::IntegrationFailure { .. } => "integration_failure",
            Error::Model(_) => "model",
            Error::DimensionBound { .. } => "dimension_bound",
        }
    }

    /// True for errors caused by the configuration rather than the numerics.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::Domain(_) | Error::Model(_))
    }
}
