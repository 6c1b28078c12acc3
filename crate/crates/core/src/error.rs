use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
    #[error("unsupported audio encoding: {0}")]
    UnsupportedAudio(String),
    #[error("audio file {0} contains no samples")]
    EmptyAudio(PathBuf),
    #[error("input too short: {found} {unit}, need at least {need}")]
    TooShort {
        found: usize,
        need: usize,
        unit: &'static str,
    },
    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: String, found: String },
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("batch needs at least {need} items, got {found}")]
    BatchTooSmall { found: usize, need: usize },
    #[error("loss weight {name} must be non-negative, got {value}")]
    NegativeWeight { name: &'static str, value: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("malformed {kind}: {reason}")]
    Format { kind: &'static str, reason: String },
    #[error("unsupported {kind} version {found} (this build reads version {expected})")]
    UnsupportedVersion {
        kind: &'static str,
        found: u32,
        expected: u32,
    },
    #[error("checkpoint digest mismatch: file is corrupted or was modified")]
    DigestMismatch,
    #[error("configuration digest mismatch: {0}")]
    ConfigMismatch(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(expected: impl ToString, found: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub fn format(kind: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            kind,
            reason: reason.into(),
        }
    }
}
