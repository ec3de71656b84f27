use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("event scheduled at {fire_time}s but the clock is already at {now}s")]
    SchedulingInPast { fire_time: f64, now: f64 },

    #[error("invalid vehicle count {0}")]
    InvalidCount(usize),

    #[error("unknown scenario `{0}` (expected mff, bff, bfa or bao)")]
    UnknownScenario(String),

    #[error("unknown figure `{0}` (expected fig3a, fig3b, fig3c or fig4)")]
    UnknownFigure(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("trace error in {path}: {message}")]
    Trace { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SimError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        SimError::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SimError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;
