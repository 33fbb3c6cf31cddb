//! Failure handling for the eductive runtime: a write-ahead log for stage
//! transactions, warm-standby promotion, MAC-based message admission,
//! measured transport selection and training-set replication.

pub mod error;
pub mod heal;
pub mod logger;
pub mod optimize;
pub mod protect;
pub mod replicate;
pub mod wal;

pub use error::ResilienceError;
pub use heal::{heal, Promotion, ReplicaPlan, StageReplicas};
pub use optimize::{optimize_select, Probe, ProbeStats, Selector};
pub use protect::{protect_check, Guard, ProtectionEvent, Verdict};
pub use replicate::{replicate_training, LocalReplica, ReplicaAck, TrainingReplica};
pub use wal::{ReplayEntry, WalLog, WalRecord};
