use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate variance: {0} is undefined when the estimate variance is zero")]
    DegenerateVariance(&'static str),

    #[error("zero denominator in optimal weights: both beliefs are identical point masses")]
    ZeroDenominator,

    #[error("both inputs have zero variance; fusion is undefined")]
    BothZeroVariance,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("degenerate fusion: several perfect (p = 1) judgments disagree ({0} vs {1})")]
    DegenerateFusion(f64, f64),

    #[error(
        "singular input: sigma1^2 and sigma2^2 coincide (|diff| = {0:e}); use the Monte Carlo path"
    )]
    SingularInput(f64),

    #[error("no eligible forecaster in survey {0}")]
    NoEligible(String),

    #[error("degenerate calibration for {0}: constant series gives v = 0")]
    DegenerateCalibration(String),

    #[error("missing lag for {variable}: no level at {period}")]
    MissingLag { variable: String, period: String },

    #[error("zero base for {variable} at {period}")]
    ZeroBase { variable: String, period: String },

    #[error("{path}:{line}: schema violation: {message}")]
    Schema {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}: duplicate row for {key} at lines {first_line} and {second_line}")]
    Duplicate {
        path: PathBuf,
        key: String,
        first_line: u64,
        second_line: u64,
    },

    #[error("empty panel: no forecasts to evaluate")]
    EmptyPanel,

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }
}
