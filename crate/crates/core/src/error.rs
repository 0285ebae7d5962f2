use thiserror::Error;

/// Errors raised while building or validating the shared data model.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid language code {0:?}")]
    InvalidLanguage(String),
    #[error("invalid country code {0:?}")]
    InvalidCountry(String),
    #[error("language set needs at least 2 distinct languages, got {0}")]
    LanguageSetTooSmall(usize),
    #[error("language {0} listed twice in the language set")]
    DuplicateLanguage(String),
    #[error("language {language} is not in the configured language set")]
    UnknownLanguage { language: String },
    #[error("sample {sample_id}: {reason}")]
    InvalidSample { sample_id: String, reason: String },
    #[error("duplicate sample id {0}")]
    DuplicateSample(String),
    #[error("parallel group {group}: {reason}")]
    InconsistentGroup { group: String, reason: String },
    #[error("verdict references unknown sample {sample_id}")]
    UnknownSample { sample_id: String },
    #[error("duplicate verdict for sample {sample_id} in language {language}")]
    DuplicateVerdict { sample_id: String, language: String },
    #[error("verdict for sample {sample_id} ({language}) names option {key} which the sample does not offer")]
    UnknownOption {
        sample_id: String,
        language: String,
        key: char,
    },
    #[error("verdicts mix persona slices {0:?}; build one table per persona")]
    MixedPersonas(Vec<String>),
    #[error("contingency table is empty")]
    EmptyTable,
    #[error("contingency row {row}: counts sum to {sum}, expected {expected}")]
    RowSum {
        row: usize,
        sum: usize,
        expected: usize,
    },
    #[error("singleton category {0:?} appears more than once")]
    SingletonReused(String),
}

/// Errors raised by the metric kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("bootstrap needs at least one iteration")]
    NoIterations,
    #[error("all {0} bootstrap draws were degenerate")]
    AllDegenerate(usize),
}

/// Errors raised while loading datasets, response logs and dumps.
#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("split ratios must be nonnegative and sum to 1, got {0:?}")]
    BadRatios([f64; 3]),
    #[error("{supersamples} supersamples cannot fill {partitions} non-empty partitions")]
    TooFewSupersamples {
        supersamples: usize,
        partitions: usize,
    },
    #[error("duplicate response for sample {sample_id} ({language}, persona {persona})")]
    DuplicateResponse {
        sample_id: String,
        language: String,
        persona: String,
    },
}

/// Errors raised by the analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("ranking does not cover language {0}")]
    RankingIncomplete(String),
    #[error("ranking shares must be nonnegative and strictly descending: {0}")]
    BadRanking(String),
    #[error("record for sample {sample_id} has no persona")]
    MissingPersona { sample_id: String },
    #[error("no gold answer for audited sample {0}")]
    MissingGold(String),
    #[error("need at least 2 points with distinct layers to fit a slope, got {0}")]
    TooFewPoints(usize),
    #[error("layer {layer} is outside the declared depth {depth}")]
    LayerOutOfRange { layer: usize, depth: usize },
    #[error("activation dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no activation rows for the {0:?} variant")]
    EmptyActivations(&'static str),
    #[error("stereotype map has no entry for language {0}")]
    StereotypeMissing(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}
