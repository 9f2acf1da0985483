use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised across the prevalence, peak, forecast and evaluation stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: series too short (need at least {needed}, got {got})")]
    TooShort {
        op: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("{op}: series too long (at most {max}, got {got})")]
    TooLong {
        op: &'static str,
        max: usize,
        got: usize,
    },

    #[error("{op}: length mismatch ({left} vs {right})")]
    LengthMismatch {
        op: &'static str,
        left: usize,
        right: usize,
    },

    #[error("no documents on {0}")]
    MissingDay(NaiveDate),

    #[error("no documents on boundary day {0}; cannot extrapolate")]
    CannotExtrapolate(NaiveDate),

    #[error("lexicon line {line}: marker {marker:?}: {reason}")]
    LexiconFormat {
        marker: String,
        line: usize,
        reason: String,
    },

    #[error("lexicon line {line}: duplicate marker {marker:?}")]
    DuplicateMarker { marker: String, line: usize },

    #[error("unknown marker {marker:?} referenced by {context}")]
    UnknownMarker { marker: String, context: String },

    #[error("index {0} is not a candidate peak")]
    NotAPeak(usize),

    #[error("{op}: insufficient data ({reason})")]
    InsufficientData { op: &'static str, reason: String },

    #[error("{op}: training diverged ({reason})")]
    NonFinite { op: &'static str, reason: String },

    #[error("all actual values are zero")]
    AllZeroActuals,

    #[error("no actual peaks to evaluate against")]
    NoActualPeaks,

    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn too_short(op: &'static str, needed: usize, got: usize) -> Self {
        Error::TooShort { op, needed, got }
    }

    pub(crate) fn insufficient(op: &'static str, reason: impl Into<String>) -> Self {
        Error::InsufficientData {
            op,
            reason: reason.into(),
        }
    }

    /// True for failures of the numerical stages, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. }
                | Error::InsufficientData { .. }
                | Error::TooShort { .. }
                | Error::AllZeroActuals
                | Error::NoActualPeaks
                | Error::NotAPeak(_)
        )
    }
}
