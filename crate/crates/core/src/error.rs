use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("series `{series}` has a non-positive value {value} at {date} under log transformation code {code}")]
    Domain {
        series: String,
        date: String,
        value: f64,
        code: u8,
    },

    #[error("transformation code {0} is outside 1..=7")]
    InvalidTcode(i64),

    #[error("every series was dropped by the missing-data filter")]
    EmptyPanel,

    #[error("column {column} has zero variance in the window")]
    DegenerateColumn { column: usize },

    #[error("column {column} has fewer than two observed values in the window")]
    InsufficientData { column: usize },

    #[error("target observation missing inside the window")]
    MissingTarget,

    #[error("requested {requested} factors but the data has numerical rank {rank}")]
    RankDeficient { requested: usize, rank: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("persistence undefined: {0}")]
    UndefinedPersistence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by malformed or unusable input rather than by
    /// the numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::InvalidTcode(_)
                | Error::Domain { .. }
                | Error::EmptyPanel
                | Error::InvalidArgument(_)
                | Error::Io(_)
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}
