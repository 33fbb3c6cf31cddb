use thiserror::Error;

use crate::codec::DecodeError;
use crate::demand::{DemandEvent, DemandState};
use crate::store::GlobalId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DemandError {
    #[error("duplicate context dimension `{0}`")]
    DuplicateDimension(String),
    #[error("illegal transition: {event:?} in state {state:?}")]
    IllegalTransition {
        state: DemandState,
        event: DemandEvent,
    },
    #[error("clock regression: timeline ends at {last} ms, got {now} ms")]
    ClockRegression { last: u64, now: u64 },
    #[error("malformed demand encoding: {0}")]
    Decode(#[from] DecodeError),
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown dispatch entry {0}")]
    UnknownEntry(GlobalId),
    #[error("worker `{worker}` does not own entry {id}")]
    NotOwner { id: GlobalId, worker: String },
    #[error("entry {0} already holds a different computed value")]
    InconsistentResult(GlobalId),
    #[error("demand must be Pending on deposit, got {0:?}")]
    NotPending(DemandState),
    #[error("snapshot i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
    #[error(transparent)]
    Demand(#[from] DemandError),
}
