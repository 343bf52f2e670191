use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("simulation fault at t = {time_ms} ms: neuron {neuron} has non-finite membrane potential")]
    SimulationFault { neuron: u32, time_ms: f64 },

    #[error("engram '{0}' is empty")]
    EmptyEngram(String),

    #[error("duplicate engram label '{0}'")]
    DuplicateLabel(String),

    #[error("unbound symbol '{0}'")]
    UnboundSymbol(String),

    #[error("not enough free neurons: requested {requested} from an arena of {available}")]
    ArenaTooSmall { requested: usize, available: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("snapshot {section}: {message}")]
    Snapshot { section: &'static str, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
