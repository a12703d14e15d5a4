use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    MalformedRow { line: usize, message: String },

    #[error("line {line}: unknown contract code `{code}`")]
    UnknownContract { line: usize, code: String },

    #[error("ambiguous date format: {0}")]
    AmbiguousDateFormat(String),

    #[error("delivery {year}-{month:02} is outside the supported calendar range 1980-2100")]
    CalendarRange { year: i32, month: u32 },

    #[error("{date}: only {points} distinct maturities observed, at least 4 are required")]
    TooFewPoints { date: NaiveDate, points: usize },

    #[error("{date}: grid maturity {maturity} lies outside the observed span [{lo}, {hi}]")]
    ExtrapolationRequired {
        date: NaiveDate,
        maturity: u32,
        lo: u32,
        hi: u32,
    },

    #[error("{date}: duplicate settles at tau={tau} disagree ({low} vs {high})")]
    DuplicateConflict {
        date: NaiveDate,
        tau: u32,
        low: f64,
        high: f64,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("design matrix is rank deficient: {0}")]
    RankDeficient(String),

    #[error("{date}: {source}")]
    AtDate {
        date: NaiveDate,
        #[source]
        source: Box<Error>,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("zero variance: {0}")]
    ZeroVariance(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("misaligned forecast origins: {0}")]
    Misaligned(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn at(self, date: NaiveDate) -> Self {
        Error::AtDate {
            date,
            source: Box::new(self),
        }
    }
}
