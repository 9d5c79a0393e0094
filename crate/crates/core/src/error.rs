use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("numerical failure in {op}: {detail}")]
    Numeric { op: &'static str, detail: String },

    #[error("config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("unknown {kind} `{value}`")]
    Unknown { kind: &'static str, value: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter { name, reason: reason.into() }
    }

    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension { op, detail: detail.into() }
    }

    pub(crate) fn numeric(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Numeric { op, detail: detail.into() }
    }

    /// Short machine-friendly category, used in the CLI's JSON error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parameter { .. } => "parameter",
            Error::Dimension { .. } => "dimension",
            Error::Geometry(_) => "geometry",
            Error::Numeric { .. } => "numeric",
            Error::Config { .. } => "config",
            Error::Infeasible(_) => "infeasible",
            Error::Unknown { .. } => "unknown",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
