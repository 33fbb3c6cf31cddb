use std::time::Duration;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("truncated frame")]
    Truncated,
    #[error("payload of {size} bytes exceeds the {max}-byte limit")]
    TooLarge { size: usize, max: usize },
    #[error("unsupported wire version {0:#04x}")]
    BadVersion(u8),
    #[error("unknown envelope kind {0:#04x}")]
    BadKind(u8),
    #[error("{0} trailing bytes after frame")]
    Trailing(usize),
    #[error("malformed control payload: {0}")]
    Control(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("Unknown transport implementation `{0}`")]
    UnknownImplementation(String),
    #[error("missing endpoint property `{0}`")]
    MissingProperty(String),
    #[error("frame payload of {size} bytes exceeds the {max}-byte limit")]
    FrameTooLarge { size: usize, max: usize },
    #[error("all brokers are down")]
    AllBrokersDown,
    #[error("broker `{0}` is down")]
    BrokerDown(String),
    #[error("consumer `{consumer}` is not subscribed to `{queue}`")]
    NotSubscribed { queue: String, consumer: String },
    #[error("queue `{0}` is exclusive and already has a consumer")]
    ExclusiveQueue(String),
    #[error("timed out after {0:?}")]
    Timeout(Duration),
    #[error("delivery has no reply queue")]
    NoReplyQueue,
    #[error("broker rejected request: {0}")]
    Remote(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

impl TransportError {
    /// Errors that mean the current broker binding is unusable.
    pub fn is_connection_loss(&self) -> bool {
        matches!(
            self,
            TransportError::BrokerDown(_) | TransportError::Io(_) | TransportError::AllBrokersDown
        )
    }
}
