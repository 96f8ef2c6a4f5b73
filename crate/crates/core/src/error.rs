use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("utterance {utterance}: {message}")]
    Corpus { utterance: String, message: String },
    #[error("invalid format in {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0} is undefined")]
    Undefined(&'static str),
    #[error("budget exceeded: {0}")]
    Budget(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("no positive source: no retained cluster has two or more members")]
    NoPositiveSource,
    #[error("no negative source: no contrasting cluster pair was selected")]
    NoNegativeSource,
    #[error("training diverged at epoch {epoch}: mean loss {loss}")]
    Divergence { epoch: usize, loss: f64 },
    #[error("not enough points: {0}")]
    TooFewPoints(String),
    #[error("invalid hierarchy input: {0}")]
    NotATree(String),
    #[error("{0}")]
    MissingArtifact(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn corpus(utterance: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Corpus {
            utterance: utterance.into(),
            message: message.into(),
        }
    }
}
