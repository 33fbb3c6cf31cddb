use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("Unable to load document: {0}")]
    UnableToLoad(String),
    #[error("unsupported sample format `{0}`")]
    UnsupportedFormat(String),
    #[error("no samples left after silence removal")]
    EmptyAfterSilenceRemoval,
    #[error("bad band [{lo}, {hi}] for nyquist {nyquist}")]
    BadBand { lo: f64, hi: f64, nyquist: f64 },
    #[error("threshold must be a non-negative number, got {0}")]
    BadThreshold(f64),
    #[error("moving-average window must be at least 1")]
    BadWindow,
    #[error("cannot split {len} samples into {frames} frames")]
    BadFrameCount { frames: usize, len: usize },
    #[error("at least one feature extractor is required")]
    NoExtractors,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("dangling reference at {0}")]
    DanglingRef(String),
    #[error("duplicate index at {0}")]
    DuplicateIndex(String),
    #[error("missing {0} layer")]
    MissingLayer(String),
    #[error("{0} layer is out of order")]
    MisplacedLayer(String),
    #[error("unexpected element at {0}")]
    UnexpectedElement(String),
    #[error("invalid attribute at {0}")]
    InvalidAttribute(String),
    #[error("malformed network document: {0}")]
    MalformedNetwork(String),
    #[error("no output neuron fired")]
    NoFire,
    #[error("Unsupported dump mode: {0}")]
    UnsupportedDumpMode(String),
    #[error("corrupt dump: {0}")]
    CorruptDump(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        PipelineError::Io(e.to_string())
    }
}

impl From<eduction_core::codec::DecodeError> for PipelineError {
    fn from(e: eduction_core::codec::DecodeError) -> Self {
        PipelineError::CorruptDump(e.to_string())
    }
}
