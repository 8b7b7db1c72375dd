use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("no utterances")]
    NoUtterances,

    #[error("context size must be 1, 2 or 3 (got {0})")]
    InvalidContext(usize),

    #[error("normalization requested but no statistics were supplied")]
    MissingStats,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("empty sequence")]
    EmptySequence,

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("non-finite gradient in `{param}` at epoch {epoch}")]
    NonFiniteGradient { param: String, epoch: usize },

    #[error("every configuration failed the specificity gate (mean specificity < {threshold})")]
    SpecificityGate { threshold: f64 },

    #[error("class {0} has no samples")]
    EmptyClass(&'static str),

    #[error("training set contains a single class")]
    SingleClassTraining,

    #[error("SMOTE needs at least 2 minority rows (got {0})")]
    SmoteMinority(usize),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("vocabulary too small to realize a shift of {target} sd on `{dim}` (reached {reached:.3})")]
    VocabularyTooSmall { dim: String, target: f64, reached: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn file(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::File {
            path: path.display().to_string(),
            source,
        }
    }

    /// True for errors caused by the configuration rather than the data.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::InvalidContext(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
