use std::io;

use thiserror::Error;

use crate::network::StationId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no links")]
    NoLinks,

    #[error("row {row}: duplicate link row (first seen at row {first})")]
    DuplicateRow { row: usize, first: usize },

    #[error("row {row}: station {station} is not defined by any vehicle link")]
    DanglingStation { row: usize, station: StationId },

    #[error("row {row}: non-positive distance {distance}")]
    NonPositiveDistance { row: usize, distance: f64 },

    #[error("row {row}: {reason}")]
    InvalidRow { row: usize, reason: String },

    #[error("station {0} has no lines")]
    StationWithoutLines(StationId),

    #[error("unknown station {0}")]
    UnknownStation(StationId),

    #[error("origin and destination are the same station ({0})")]
    SameOriginDestination(StationId),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("corrupt input: {invalid} of {total} rows invalid")]
    CorruptInput { invalid: usize, total: usize },

    #[error("path {path_id} references link {link_id} which has no variable column")]
    MissingColumn { path_id: usize, link_id: usize },

    #[error("path {path_id} boards at platform {platform} which has no wait column")]
    MissingWaitColumn { path_id: usize, platform: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("no observed rows to fit")]
    NoObservations,

    #[error("loss diverged at epoch {epoch}")]
    Divergence {
        epoch: usize,
        last_finite_t: Vec<f64>,
        last_finite_loss: f64,
    },

    #[error("undefined R²: truth is constant")]
    UndefinedR2,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by the numerics rather than by the input data.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. } | Error::NonFinite(_) | Error::UndefinedR2
        )
    }
}
