use thiserror::Error;

use crate::heal::Promotion;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ResilienceError {
    #[error("write-ahead log holds {max} uncommitted transactions")]
    WalFull { max: usize },
    #[error("unknown transaction {0}")]
    UnknownTxn(u64),
    #[error("transaction {0} is already committed")]
    DoubleCommit(u64),
    #[error("corrupt log at byte {offset}: {reason}")]
    CorruptLog { offset: u64, reason: String },
    #[error("i/o: {0}")]
    Io(String),
    #[error("unknown worker `{0}`")]
    UnknownWorker(String),
    #[error("stage `{stage}` has no standby left to promote")]
    NoStandbyAvailable { stage: String, actions: Vec<Promotion> },
    #[error("stage `{0}` must keep at least one route")]
    InvalidPlan(String),
    #[error("no transport has been probed")]
    NoProbes,
    #[error("training set replication failed on {failed:?}")]
    ReplicationIncomplete { failed: Vec<String> },
}

impl From<std::io::Error> for ResilienceError {
    fn from(e: std::io::Error) -> Self {
        ResilienceError::Io(e.to_string())
    }
}
