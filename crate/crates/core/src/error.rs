use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("pair {index} has {len} target tokens, more than the token budget {budget}")]
    PairTooLong {
        index: usize,
        len: usize,
        budget: usize,
    },

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("{op} expects a scalar output, got shape {shape:?}")]
    NotScalar {
        op: &'static str,
        shape: (usize, usize),
    },

    #[error("backward already ran on this tape")]
    BackwardTwice,

    #[error("unknown backward rule {0:?}")]
    UnknownRule(String),

    #[error("unknown operator {0:?}, expected one of sx|stl|sg|st|gx")]
    UnknownOperator(String),

    #[error("operator {kind} {problem}")]
    NoiseMismatch { kind: String, problem: &'static str },

    #[error("non-finite gradient")]
    NonFiniteGradient,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("input row {row} is not on the simplex (sum {sum}, min {min})")]
    NotOnSimplex { row: usize, sum: f64, min: f64 },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("refinement requires masked-conditional")]
    RefinementArch,

    #[error("length {len} outside 1..={max}")]
    LengthOutOfRange { len: usize, max: usize },

    #[error("enumeration limits exceeded: |V|={vocab} (max 6), max_len={max_len} (max 4)")]
    EnumerationTooLarge { vocab: usize, max_len: usize },

    #[error("teacher parameters changed during training (hash {before} -> {after})")]
    TeacherModified { before: String, after: String },

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },

    #[error("config key {key:?}: {message}")]
    Config { key: String, message: String },

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("io error on {path}: {source}")]
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
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
