use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

/// Errors produced by the calibration and verification library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    MalformedRow {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}: unexpected header {found:?}, expected {expected:?}")]
    BadHeader {
        path: PathBuf,
        found: String,
        expected: String,
    },

    #[error("duplicate record: {0}")]
    Duplicate(String),

    #[error("unknown station_id {station_id:?}{}", .context.as_deref().map(|c| format!(" ({c})")).unwrap_or_default())]
    UnknownStation {
        station_id: String,
        context: Option<String>,
    },

    #[error("empty training window for target {target} lead {lead_days}d ({dropped} cases dropped for missing observations)")]
    EmptyWindow {
        target: NaiveDate,
        lead_days: u32,
        dropped: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("nonpositive predictive variance {0}")]
    NonPositiveVariance(f64),

    #[error("skill score undefined: reference score is zero while score is {0}")]
    UndefinedSkill(f64),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("series are not aligned: {0}")]
    Misaligned(String),

    #[error("too few stations ({stations}) for {k} clusters")]
    TooFewStations { stations: usize, k: usize },

    #[error("config: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wrap with a human-readable location (configuration, day, lead ...).
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Short machine-readable tag for the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MalformedRow { .. } => "malformed_row",
            Error::BadHeader { .. } => "bad_header",
            Error::Duplicate(_) => "duplicate",
            Error::UnknownStation { .. } => "unknown_station",
            Error::EmptyWindow { .. } => "empty_window",
            Error::InvalidInput(_) => "invalid_input",
            Error::NonFinite(_) => "non_finite",
            Error::NonPositiveVariance(_) => "nonpositive_variance",
            Error::UndefinedSkill(_) => "undefined_skill",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::Misaligned(_) => "misaligned",
            Error::TooFewStations { .. } => "too_few_stations",
            Error::Config(_) => "config",
            Error::Context { source, .. } => source.kind(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
