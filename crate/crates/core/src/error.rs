use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid compression regime: {rows} measurements for {cols} unknowns (need rows < cols)")]
    InvalidCompressionRegime { rows: usize, cols: usize },

    #[error("empty dimension: {rows}x{cols}")]
    EmptyDimension { rows: usize, cols: usize },

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("value out of range in {what}: {value}")]
    OutOfRange { what: &'static str, value: f64 },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("ill-conditioned system at iteration {iteration}{}: {context}", task_suffix(*.task))]
    IllConditioned {
        iteration: usize,
        task: Option<usize>,
        context: String,
    },

    #[error("degenerate noise update: s - sum(gamma) = {denominator}")]
    DegenerateNoiseUpdate { denominator: f64 },

    #[error("rank-deficient selection at step {step} (column {column})")]
    RankDeficient { step: usize, column: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("corrupt image: {0}")]
    CorruptImage(String),

    #[error("unsupported resize from {from:?} to {to:?} (upscaling)")]
    UnsupportedResize {
        from: (usize, usize),
        to: (usize, usize),
    },

    #[error("infeasible geometry: {0}")]
    InfeasibleGeometry(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn task_suffix(task: Option<usize>) -> String {
    task.map(|t| format!(" (task {t})")).unwrap_or_default()
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-friendly tag, used in the status column of metrics CSVs.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidCompressionRegime { .. } => "invalid-compression-regime",
            Error::EmptyDimension { .. } => "empty-dimension",
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::NonFinite(_) => "non-finite",
            Error::OutOfRange { .. } => "out-of-range",
            Error::MalformedHeader(_) => "malformed-header",
            Error::TruncatedPayload { .. } => "truncated-payload",
            Error::IllConditioned { .. } => "ill-conditioned",
            Error::DegenerateNoiseUpdate { .. } => "degenerate-noise-update",
            Error::RankDeficient { .. } => "rank-deficient",
            Error::InvalidConfig(_) => "invalid-config",
            Error::UnsupportedFormat(_) => "unsupported-format",
            Error::CorruptImage(_) => "corrupt-image",
            Error::UnsupportedResize { .. } => "unsupported-resize",
            Error::InfeasibleGeometry(_) => "infeasible-geometry",
            Error::EmptyInput(_) => "empty-input",
            Error::Io { .. } => "io",
        }
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        });
    }
    Ok(())
}
