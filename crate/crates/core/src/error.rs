use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}: malformed CSV: {message}")]
    Csv { file: String, message: String },

    #[error("{file}: missing required column `{column}`")]
    MissingColumn { file: String, column: String },

    #[error("{file}: row {row}: duplicate key {key}")]
    DuplicateKey { file: String, row: usize, key: String },

    #[error("{file}: row {row}: field `{field}` = {value} is out of range")]
    ValueOutOfRange {
        file: String,
        row: usize,
        field: String,
        value: String,
    },

    #[error("{file}: row {row}: field `{field}` is not a number: {value:?}")]
    InvalidNumber {
        file: String,
        row: usize,
        field: String,
        value: String,
    },

    #[error("{file}: table has no usable rows")]
    EmptyTable { file: String },

    #[error("unknown city `{0}`")]
    UnknownCity(String),

    #[error("unknown occupation `{0}`")]
    UnknownOccupation(String),

    #[error("no automation probabilities loaded for source `{0}`")]
    UnknownProbSource(String),

    #[error("city `{0}` has no employment")]
    EmptyCity(String),

    #[error("city `{0}` has no employment in occupations with an automation probability")]
    ZeroCoverage(String),

    #[error("city `{0}` has no employment in occupations with skill data")]
    NoSkillCoverage(String),

    #[error("occupation `{0}` has no skill with positive importance")]
    AllZeroSkills(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("k = {k} is out of range 1..={max}")]
    KOutOfRange { k: usize, max: usize },

    #[error("shift report is unnormalized (E_m and E_n coincide)")]
    UnnormalizedReport,

    #[error("need at least {needed} usable points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("value at index {index} must be positive, got {value}")]
    NonPositiveValue { index: usize, value: f64 },

    #[error("subsample rate {0} is outside (0, 1]")]
    RateOutOfRange(f64),

    #[error("k = {k} exceeds the number of rows ({rows})")]
    KTooLarge { k: usize, rows: usize },

    #[error("matrix has no rows or no columns")]
    EmptyMatrix,

    #[error("requested {dims} dimensions but at most {max} are available")]
    DimsTooLarge { dims: usize, max: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("`{0}` has zero variance")]
    ZeroVariance(String),

    #[error("design matrix is rank deficient at column `{column}`")]
    RankDeficient { column: String },

    #[error("{rows} rows is too few; need more than {needed}")]
    TooFewRows { rows: usize, needed: usize },

    #[error("target values are constant; bins are undefined")]
    DegenerateRange,

    #[error("group `{0}` has zero total weight")]
    EmptyGroup(String),

    #[error("noise half-width must be non-negative, got {0}")]
    NegativeError(f64),

    #[error("removal fraction {0} is outside [0, 1)")]
    FractionOutOfRange(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }

    /// `true` for errors caused by inputs or configuration, `false` for
    /// violated internal invariants.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Invariant(_) => false,
            Error::Stage { source, .. } => source.is_input_error(),
            _ => true,
        }
    }

    /// Process exit code: 2 for input/config errors, 1 for internal failures.
    pub fn exit_code(&self) -> i32 {
        if self.is_input_error() {
            2
        } else {
            1
        }
    }
}
