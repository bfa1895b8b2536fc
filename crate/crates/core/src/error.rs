use thiserror::Error;

/// Crate-wide error type. Variants are grouped by the pipeline stage that
/// raises them; most carry enough context to point at the offending file,
/// channel or subject.
#[derive(Debug, Error)]
pub enum Error {
    // ---- ingest ----
    #[error("malformed EDF header: {0}")]
    MalformedHeader(String),
    #[error("inconsistent EDF signal {signal}: digital max {dig_max} <= digital min {dig_min}")]
    InconsistentSignal {
        signal: usize,
        dig_min: i32,
        dig_max: i32,
    },
    #[error("truncated EDF data: expected {expected} bytes of samples, found {found}")]
    TruncatedData { expected: usize, found: usize },
    #[error("channel {0:?} not present in recording")]
    MissingChannel(String),
    #[error("non-numeric cell {value:?} at row {row}, column {column}")]
    NonNumericCell {
        row: usize,
        column: String,
        value: String,
    },
    #[error("duplicate subject id {0:?} in manifest")]
    DuplicateSubject(String),
    #[error("class label {0} missing from manifest class_names")]
    UnknownClassLabel(u32),

    // ---- dsp ----
    #[error("filter design produced unstable coefficients ({0})")]
    UnstableFilter(String),
    #[error("invalid resample rate: {0}")]
    InvalidRate(String),
    #[error("average reference needs at least 2 channels, got {0}")]
    TooFewChannels(usize),
    #[error("recording ({samples} samples) shorter than one epoch ({needed} samples)")]
    EpochTooLong { samples: usize, needed: usize },
    #[error("invalid filter spec: {0}")]
    InvalidFilterSpec(String),

    // ---- features ----
    #[error("welch segment ({segment} samples) longer than epoch ({samples} samples)")]
    SegmentTooLong { segment: usize, samples: usize },
    #[error("band {name} [{lo}, {hi}) contains no PSD bins")]
    EmptyBand { name: String, lo: f64, hi: f64 },

    // ---- gbt ----
    #[error("training labels contain a single class ({0})")]
    SingleClassTraining(u32),
    #[error("early stopping requires a non-empty eval set")]
    EmptyEvalSet,
    #[error("feature count mismatch: model has {expected}, input has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{subjects} subjects cannot be split into {folds} stratified folds")]
    TooFewSubjectsForFolds { subjects: usize, folds: usize },
    #[error("invalid training parameters: {0}")]
    InvalidParams(String),

    // ---- explain ----
    #[error("tree node missing cover statistics")]
    MissingCover,
    #[error("brute-force Shapley supports at most {max} features, got {got}")]
    TooManyFeatures { max: usize, got: usize },
    #[error("empty feature matrix")]
    EmptyMatrix,

    // ---- evaluate ----
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("ROC AUC needs both positive and negative labels")]
    SingleClassLabels,
    #[error("leave-one-subject-out needs >= 2 subjects, got {0}")]
    TooFewSubjects(usize),

    // ---- stressguard ----
    #[error("feature names or shapes do not match")]
    FeatureMismatch,
    #[error("stress coefficient needs non-empty groups ({0} group is empty)")]
    EmptyGroup(String),
    #[error("subject {0:?} not present in table")]
    UnknownSubject(String),

    // ---- synthgen ----
    #[error("invalid cohort spec: {0}")]
    InvalidSpec(String),

    // ---- io ----
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error in {path}: {message}")]
    MalformedJson { path: String, message: String },
    #[error("csv error in {path}: {message}")]
    MalformedCsv { path: String, message: String },
}

impl Error {
    /// Wrap an I/O error with the path it occurred on.
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::IoFailure {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
