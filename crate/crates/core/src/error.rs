use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("contradictory fixing of variable {0}")]
    ContradictoryFixing(usize),

    #[error("exhaustive search limited to K <= {cap}, got K = {k}")]
    OracleCap { k: usize, cap: usize },

    #[error("unknown detector `{0}`")]
    UnknownDetector(String),

    #[error("malformed instance: {0}")]
    Parse(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
