use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("event #{index}: pixel ({u}, {v}) outside {width}x{height} sensor")]
    EventOutOfBounds {
        index: usize,
        u: u32,
        v: u32,
        width: u32,
        height: u32,
    },

    #[error("event #{index}: timestamp {t} precedes previous timestamp {prev}")]
    EventOrder { index: usize, t: f64, prev: f64 },

    #[error("time surface requested at t={t} but an event was ingested at t={last}")]
    TimeRegression { t: f64, last: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite coordinate")]
    NonFinite,

    #[error("feature {0} is already present in the voxel map")]
    DuplicateFeature(u64),

    #[error("feature {0} is not present in the voxel map")]
    UnknownFeature(u64),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("no timestamp pairs within {max_dt} s")]
    NoAssociation { max_dt: f64 },

    #[error("imu sample #{index} at t={t} is not after the previous sample")]
    ImuOrder { index: usize, t: f64 },

    #[error("t={t} is outside the trajectory interval [0, {duration}]")]
    TimeOutOfRange { t: f64, duration: f64 },

    #[error("DIVERGED: {0}")]
    Diverged(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
