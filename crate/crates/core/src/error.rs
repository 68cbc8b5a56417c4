use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library reports.
///
/// Variants are grouped loosely by the stage that raises them; see
/// [`Error::is_numerical`] for the split used by the command-line exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },

    #[error("duplicate judgment for task `{task}` by worker `{worker}`")]
    DuplicateJudgment { task: String, worker: String },

    #[error("label `{label}` at line {line} is outside the label space of {classes} classes")]
    LabelOutOfRange {
        line: u64,
        label: String,
        classes: usize,
    },

    #[error("non-positive completion time {time} at line {line}")]
    NonPositiveTime { line: u64, time: f64 },

    #[error("invalid label space: {0}")]
    InvalidLabelSpace(String),

    #[error("dataset has no judgments")]
    EmptyDataset,

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparameters(String),

    #[error("task `{0}` has no judgments")]
    TaskWithoutJudgments(String),

    #[error("one-coin model requires binary labels, got {0} classes")]
    NotBinary(usize),

    #[error("invalid iteration counts: iterations={iterations}, burnin={burnin}")]
    InvalidIterationCounts { iterations: usize, burnin: usize },

    #[error("summary from `{0}` carries no duration state")]
    MissingDurationState(String),

    #[error("all categorical weights are zero")]
    AllZeroWeights,

    #[error("non-positive count {0} for a Dirichlet/Beta parameter")]
    NonPositiveCount(f64),

    #[error("empty truncation interval [{lower}, {upper}]")]
    EmptyInterval { lower: f64, upper: f64 },

    #[error("sampler failure: {0}")]
    SamplerFailure(String),

    #[error("gold labels contain a single class")]
    SingleClassGold,

    #[error("gold labels are required for this operation")]
    MissingGold,

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("fraction {0} leaves some task without judgments")]
    FractionTooSmall(f64),

    #[error("invalid simulation config: {0}")]
    ConfigInvalid(String),

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical machinery rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::AllZeroWeights
                | Error::NonPositiveCount(_)
                | Error::EmptyInterval { .. }
                | Error::SamplerFailure(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
