use eduction_runtime::RuntimeError;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { key: String, line: usize },
    #[error("line {line}: expected `key=value`")]
    Malformed { line: usize },
    #[error("`{key}`: {message}")]
    BadValue { key: String, message: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("at {position}: expected {expected}")]
pub struct ParseError {
    /// Character offset of the offending token (the input length at end of input).
    pub position: usize,
    pub expected: String,
}

#[derive(Debug, thiserror::Error)]
pub enum MgmtError {
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("invalid network file at `{path}`: {message}")]
    InvalidNetworkFile { path: String, message: String },
    #[error("cannot bind {address}: {message}")]
    BindFailure { address: String, message: String },
    #[error("{0}")]
    Unsupported(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("management service: {0}")]
    Remote(String),
    #[error("{code}: {message}")]
    Api { status: u16, code: String, message: String },
}

impl MgmtError {
    /// Stable machine-readable code, the variant name of the underlying error.
    pub fn code(&self) -> &'static str {
        match self {
            MgmtError::Runtime(e) => runtime_code(e),
            MgmtError::Config(ConfigError::DuplicateKey { .. }) => "DuplicateKey",
            MgmtError::Config(ConfigError::Malformed { .. }) => "Malformed",
            MgmtError::Config(_) => "BadConfiguration",
            MgmtError::Parse(_) => "ParseError",
            MgmtError::InvalidNetworkFile { .. } => "InvalidNetworkFile",
            MgmtError::BindFailure { .. } => "BindFailure",
            MgmtError::Unsupported(_) => "Unsupported",
            MgmtError::BadRequest(_) => "BadRequest",
            MgmtError::Io(_) => "Io",
            MgmtError::Remote(_) => "Remote",
            MgmtError::Api { .. } => "Api",
        }
    }

    /// HTTP status of the error body.
    pub fn status(&self) -> u16 {
        if let MgmtError::Api { status, .. } = self {
            return *status;
        }
        match self.code() {
            "UnknownNode" | "UnknownTier" | "UnknownProgram" => 404,
            "DuplicateNodeId" | "LastRouteViolation" | "ProgramConflict" | "TierTypeMismatch" => 409,
            "ParseError" | "InvalidNetworkFile" | "BadRequest" | "UnableToLoad" | "ProgramSyntax"
            | "UnresolvedReference" | "Malformed" | "DuplicateKey" => 400,
            "Unsupported" => 422,
            "Timeout" => 504,
            _ => 500,
        }
    }
}

pub fn runtime_code(e: &RuntimeError) -> &'static str {
    use RuntimeError::*;
    match e {
        DuplicateNodeId(_) => "DuplicateNodeId",
        UnknownNode(_) => "UnknownNode",
        UnknownTier(_) => "UnknownTier",
        TierTypeMismatch { .. } => "TierTypeMismatch",
        LastRouteViolation(_) => "LastRouteViolation",
        ProgramSyntax { .. } => "ProgramSyntax",
        UnresolvedReference(_) => "UnresolvedReference",
        ProgramConflict(_) => "ProgramConflict",
        UnknownProgram(_) => "UnknownProgram",
        UndefinedIdentifier(_) => "UndefinedIdentifier",
        CyclicDefinition(_) => "CyclicDefinition",
        IndexOutOfRange { .. } => "IndexOutOfRange",
        EvaluationFailure(_) => "EvaluationFailure",
        Timeout(_) => "Timeout",
        UnableToLoad(_) => "UnableToLoad",
        ProcessingFailed { .. } => "ProcessingFailed",
        Crashed(_) => "Crashed",
        ReplayMismatch(_) => "ReplayMismatch",
        Store { .. } => "Store",
        Protocol(_) => "Protocol",
        NoTier(_) => "NoTier",
        Transport(_) => "Transport",
        Resilience(_) => "Resilience",
        Pipeline(_) => "Pipeline",
    }
}
