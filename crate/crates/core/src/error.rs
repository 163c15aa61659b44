use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("required column `{0}` is unmapped or absent")]
    MissingColumn(String),
    #[error("dataset has no valid rows")]
    EmptyDataset,
    #[error("user {user_id} appears in more than one arm; the instrument is not user-randomized")]
    MixedArmsWithinUser { user_id: u64 },
    #[error("i/o failure on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid simulator config: {0}")]
    InvalidConfig(String),
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("item {0} does not occur in the dataset")]
    UnknownItem(u64),
    #[error("underidentified: {instruments} instrument(s) for {endogenous} endogenous column(s)")]
    Underidentified { instruments: usize, endogenous: usize },
    #[error("underdetermined: {rows} row(s) for {columns} column(s)")]
    Underdetermined { rows: usize, columns: usize },
    #[error("column `{0}` has zero variance")]
    ConstantColumn(String),
    #[error("design is collinear (condition number {condition:.3e})")]
    Collinear { condition: f64 },
    #[error("ILS needs exactly one endogenous column and one excluded instrument (got {endogenous} and {instruments})")]
    NotJustIdentified { endogenous: usize, instruments: usize },
    #[error("first-stage coefficient is numerically zero; the ILS ratio is undefined")]
    ZeroFirstStage,
    #[error("cluster-robust covariance needs at least 2 clusters (got {0})")]
    TooFewClusters(usize),
    #[error("no inputs to aggregate")]
    EmptyInput,
    #[error("fit has no coefficient named `{0}`")]
    MissingCoefficient(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the failure stems from the inputs rather than from estimation.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::MissingColumn(_)
                | Error::EmptyDataset
                | Error::MixedArmsWithinUser { .. }
                | Error::Io { .. }
                | Error::Parse(_)
                | Error::InvalidConfig(_)
                | Error::InvalidSpec(_)
                | Error::UnknownItem(_)
        )
    }
}
