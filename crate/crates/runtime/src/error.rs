use eduction_core::{DemandError, StoreError};
use eduction_pipeline::PipelineError;
use eduction_resilience::ResilienceError;
use eduction_transport::TransportError;
use thiserror::Error;

use crate::topology::TierType;

/// Store failures as they travel between tiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreFault {
    UnknownEntry,
    NotOwner,
    InconsistentResult,
    NotPending,
    Other,
}

impl StoreFault {
    pub fn tag(self) -> u8 {
        match self {
            StoreFault::UnknownEntry => 1,
            StoreFault::NotOwner => 2,
            StoreFault::InconsistentResult => 3,
            StoreFault::NotPending => 4,
            StoreFault::Other => 5,
        }
    }

    pub fn from_tag(tag: u8) -> Self {
        match tag {
            1 => StoreFault::UnknownEntry,
            2 => StoreFault::NotOwner,
            3 => StoreFault::InconsistentResult,
            4 => StoreFault::NotPending,
            _ => StoreFault::Other,
        }
    }
}

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("node `{0}` is already registered")]
    DuplicateNodeId(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("unknown tier `{0}`")]
    UnknownTier(String),
    #[error("tier `{tier}` is a {actual}, not a {expected}")]
    TierTypeMismatch {
        tier: String,
        expected: TierType,
        actual: TierType,
    },
    #[error("removing these tiers leaves the started instance without a {0}")]
    LastRouteViolation(TierType),
    #[error("program line {line}: {message}")]
    ProgramSyntax { line: usize, message: String },
    #[error("unresolved reference `{0}`")]
    UnresolvedReference(String),
    #[error("program `{0}` is already registered with a different body")]
    ProgramConflict(String),
    #[error("unknown program `{0}`")]
    UnknownProgram(String),
    #[error("undefined identifier `{0}`")]
    UndefinedIdentifier(String),
    #[error("`{0}` depends on itself in the same context")]
    CyclicDefinition(String),
    #[error("`{identifier}` evaluated at negative index {index}")]
    IndexOutOfRange { identifier: String, index: i64 },
    #[error("evaluation failed: {0}")]
    EvaluationFailure(String),
    #[error("timed out waiting for {0}")]
    Timeout(String),
    #[error("unable to load document: {0}")]
    UnableToLoad(String),
    #[error("unable to process the document at stage `{stage}`: {reason}")]
    ProcessingFailed { stage: String, reason: String },
    #[error("injected crash at {0}")]
    Crashed(String),
    #[error("log entry for stage `{0}` does not match the recomputed input")]
    ReplayMismatch(String),
    #[error("store: {message}")]
    Store { fault: StoreFault, message: String },
    #[error("malformed message: {0}")]
    Protocol(String),
    #[error("no started {0} tier")]
    NoTier(TierType),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Resilience(#[from] ResilienceError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

impl RuntimeError {
    pub fn store_fault(&self) -> Option<StoreFault> {
        match self {
            RuntimeError::Store { fault, .. } => Some(*fault),
            _ => None,
        }
    }
}

impl From<StoreError> for RuntimeError {
    fn from(e: StoreError) -> Self {
        let fault = match &e {
            StoreError::UnknownEntry(_) => StoreFault::UnknownEntry,
            StoreError::NotOwner { .. } => StoreFault::NotOwner,
            StoreError::InconsistentResult(_) => StoreFault::InconsistentResult,
            StoreError::NotPending(_) => StoreFault::NotPending,
            _ => StoreFault::Other,
        };
        RuntimeError::Store {
            fault,
            message: e.to_string(),
        }
    }
}

impl From<DemandError> for RuntimeError {
    fn from(e: DemandError) -> Self {
        RuntimeError::Protocol(e.to_string())
    }
}

impl From<eduction_core::codec::DecodeError> for RuntimeError {
    fn from(e: eduction_core::codec::DecodeError) -> Self {
        RuntimeError::Protocol(e.to_string())
    }
}
