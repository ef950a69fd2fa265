use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("backward already ran on this graph; call reset_grads first")]
    BackwardTwice,

    #[error("dictionary line {line}: {reason}")]
    DictionaryParse { line: usize, reason: String },

    #[error("dictionary is empty")]
    EmptyDictionary,

    #[error("viseme table line {line}: {reason}")]
    VisemeTableParse { line: usize, reason: String },

    #[error("viseme table covers {found} viseme ids, expected {expected}")]
    VisemeTableCoverage { found: usize, expected: usize },

    #[error("word `{0}` is not in the pronouncing dictionary")]
    OutOfVocabulary(String),

    #[error("phoneme `{0}` has no viseme mapping")]
    UnmappedPhoneme(String),

    #[error("empty text")]
    EmptyText,

    #[error("label {label} at position {position} refers to a class with no representative")]
    MaskedClass { position: usize, label: usize },

    #[error("label {0} outside the class range")]
    LabelRange(usize),

    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("loss term {0} is active but its batch is empty")]
    EmptyBatch(&'static str),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },

    #[error("empty {0} split")]
    EmptySplit(&'static str),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("dataset file {path}: {reason}")]
    DatasetFormat { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
