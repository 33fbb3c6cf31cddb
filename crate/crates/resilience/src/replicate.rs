//! Keeps every classification worker's training set byte-identical.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use eduction_pipeline::storage::{decode_binary, encode_binary};
use eduction_pipeline::TrainingSet;

use crate::error::ResilienceError;

/// A worker-side copy of the training set.
pub trait TrainingReplica: Send + Sync {
    fn id(&self) -> &str;
    fn digest(&self) -> Result<[u8; 32], String>;
    /// Installs a BINARY dump and returns the digest of what was installed.
    fn install(&self, dump: &[u8]) -> Result<[u8; 32], String>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplicaAck {
    pub worker: String,
    pub digest: [u8; 32],
    pub bytes_shipped: usize,
}

/// Ships the set to each worker whose digest differs.
pub fn replicate_training(
    ts: &TrainingSet,
    workers: &[Arc<dyn TrainingReplica>],
) -> (Vec<ReplicaAck>, Result<(), ResilienceError>) {
    let want = ts.digest();
    let dump = encode_binary(ts);
    let mut acks = Vec::new();
    let mut failed = Vec::new();
    for w in workers {
        let outcome = w.digest().and_then(|have| {
            if have == want {
                return Ok(0);
            }
            match w.install(&dump)? {
                got if got == want => Ok(dump.len()),
                _ => Err("digest mismatch after install".to_owned()),
            }
        });
        match outcome {
            Ok(bytes_shipped) => acks.push(ReplicaAck {
                worker: w.id().to_owned(),
                digest: want,
                bytes_shipped,
            }),
            Err(e) => {
                log::warn!("training set replication to {} failed: {e}", w.id());
                failed.push(w.id().to_owned());
            }
        }
    }
    let result = if failed.is_empty() {
        Ok(())
    } else {
        Err(ResilienceError::ReplicationIncomplete { failed })
    };
    (acks, result)
}

/// In-process replica held by a classification worker.
#[derive(Debug)]
pub struct LocalReplica {
    id: String,
    set: RwLock<TrainingSet>,
    reachable: AtomicBool,
    installs: AtomicU64,
}

impl LocalReplica {
    pub fn new(id: &str) -> Self {
        Self {
            id: id.to_owned(),
            set: RwLock::new(TrainingSet::new()),
            reachable: AtomicBool::new(true),
            installs: AtomicU64::new(0),
        }
    }

    pub fn set_reachable(&self, up: bool) {
        self.reachable.store(up, Ordering::SeqCst);
    }

    pub fn snapshot(&self) -> TrainingSet {
        self.set.read().unwrap().clone()
    }

    pub fn installs(&self) -> u64 {
        self.installs.load(Ordering::SeqCst)
    }

    fn check(&self) -> Result<(), String> {
        if self.reachable.load(Ordering::SeqCst) {
            Ok(())
        } else {
            Err(format!("worker {} unreachable", self.id))
        }
    }
}

impl TrainingReplica for LocalReplica {
    fn id(&self) -> &str {
        &self.id
    }

    fn digest(&self) -> Result<[u8; 32], String> {
        self.check()?;
        Ok(self.set.read().unwrap().digest())
    }

    fn install(&self, dump: &[u8]) -> Result<[u8; 32], String> {
        self.check()?;
        let ts = decode_binary(dump).map_err(|e| e.to_string())?;
        let digest = ts.digest();
        *self.set.write().unwrap() = ts;
        self.installs.fetch_add(1, Ordering::SeqCst);
        Ok(digest)
    }
}
