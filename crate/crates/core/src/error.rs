use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("declination {0} deg is outside [-90, 90]")]
    Domain(f64),

    #[error("input vectors are collinear (cross-product norm {0:.3e})")]
    Collinear(f64),

    #[error("catalog row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("duplicate HIP id {0} in catalog")]
    DuplicateHip(u32),

    #[error("incompatible database: {0}")]
    Incompatible(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
