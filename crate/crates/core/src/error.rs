use std::path::PathBuf;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Input,
    Config,
    Runtime,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,
    #[error("reserved token present")]
    ReservedToken,
    #[error("not a parity-negation sentence")]
    NotParityNegation,
    #[error("line {line}: {source}")]
    Line {
        line: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("invalid grammar: {0}")]
    InvalidGrammar(String),
    #[error("invalid generation config: {0}")]
    InvalidGenerationConfig(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: usize, size: usize },
    #[error("malformed vocabulary file: {0}")]
    BadVocabulary(String),
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    InvalidOp { op: &'static str, msg: String },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("all targets ignored")]
    AllTargetsIgnored,
    #[error("step must be positive")]
    NonPositiveStep,
    #[error("invalid model config: {0}")]
    InvalidModelConfig(String),
    #[error("sequence of length {len} exceeds max_seq {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("vocabulary mismatch: model expects {model} tokens, data uses {data}")]
    VocabMismatch { model: usize, data: usize },
    #[error("invalid training config: {0}")]
    InvalidTrainingConfig(String),
    #[error("step {step} outside schedule range 0..={total}")]
    StepOutOfRange { step: usize, total: usize },
    #[error("need at least 2 samples per group, got {n1} and {n2}")]
    TooFewSamples { n1: usize, n2: usize },
    #[error("zero pooled variance")]
    ZeroPooledVariance,
    #[error("degrees of freedom must be positive, got {0}")]
    NonPositiveDf(f64),
    #[error("stabilized window is empty")]
    EmptyWindow,
    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),
    #[error("at least two impossible groups are required, got {0}")]
    TooFewImpossibleGroups(usize),
    #[error("corpus file not found: {}", .0.display())]
    MissingCorpus(PathBuf),
    #[error("output directory not writable: {}: {source}", path.display())]
    Unwritable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("malformed metrics file: {0}")]
    BadMetrics(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::EmptyInput
            | Error::ReservedToken
            | Error::NotParityNegation
            | Error::EmptyCorpus
            | Error::IdOutOfRange { .. }
            | Error::BadVocabulary(_)
            | Error::MissingCorpus(_)
            | Error::BadCheckpoint(_)
            | Error::BadMetrics(_)
            | Error::Csv(_)
            | Error::Json(_) => ErrorCategory::Input,
            Error::Line { source, .. } => source.category(),
            Error::InvalidGrammar(_)
            | Error::InvalidGenerationConfig(_)
            | Error::InvalidModelConfig(_)
            | Error::InvalidTrainingConfig(_)
            | Error::InvalidSpec(_)
            | Error::TooFewImpossibleGroups(_)
            | Error::Toml(_) => ErrorCategory::Config,
            _ => ErrorCategory::Runtime,
        }
    }

    pub(crate) fn at_line(self, line: usize) -> Error {
        Error::Line {
            line,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
