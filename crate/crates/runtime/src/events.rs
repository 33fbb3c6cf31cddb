//! Ordered, gap-free event stream of one runtime instance.

use std::collections::{BTreeMap, VecDeque};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use eduction_core::{now_ms, Millis};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    NodeRegistered,
    NodeStarted,
    NodeStopped,
    NodeDown,
    TierAllocated,
    TierDeallocated,
    TierConfigured,
    WorkerDown,
    DemandStateChanged,
    HealingAction,
    HealingAlert,
    MessageInsecure,
    TransportSelected,
    NetworkLoaded,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::NodeRegistered => "node_registered",
            EventKind::NodeStarted => "node_started",
            EventKind::NodeStopped => "node_stopped",
            EventKind::NodeDown => "node_down",
            EventKind::TierAllocated => "tier_allocated",
            EventKind::TierDeallocated => "tier_deallocated",
            EventKind::TierConfigured => "tier_configured",
            EventKind::WorkerDown => "worker_down",
            EventKind::DemandStateChanged => "demand_state_changed",
            EventKind::HealingAction => "healing_action",
            EventKind::HealingAlert => "healing_alert",
            EventKind::MessageInsecure => "message_insecure",
            EventKind::TransportSelected => "transport_selected",
            EventKind::NetworkLoaded => "network_loaded",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub timestamp: Millis,
    pub kind: EventKind,
    pub detail: BTreeMap<String, String>,
}

struct Log {
    next_seq: u64,
    retained: VecDeque<Event>,
}

/// Append-only event log with bounded retention. Sequence numbers start at 1
/// and never skip.
pub struct EventBus {
    log: Mutex<Log>,
    grew: Condvar,
    capacity: usize,
}

impl Default for EventBus {
    fn default() -> Self {
        Self::new(65_536)
    }
}

impl std::fmt::Debug for EventBus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EventBus").field("last_seq", &self.last_seq()).finish()
    }
}

impl EventBus {
    pub fn new(capacity: usize) -> Self {
        Self {
            log: Mutex::new(Log {
                next_seq: 1,
                retained: VecDeque::new(),
            }),
            grew: Condvar::new(),
            capacity: capacity.max(1),
        }
    }

    pub fn emit<I, K>(&self, kind: EventKind, detail: I) -> u64
    where
        I: IntoIterator<Item = (K, String)>,
        K: Into<String>,
    {
        let detail = detail.into_iter().map(|(k, v)| (k.into(), v)).collect();
        let mut log = self.log.lock().unwrap();
        let seq = log.next_seq;
        log.next_seq += 1;
        log.retained.push_back(Event {
            seq,
            timestamp: now_ms(),
            kind,
            detail,
        });
        while log.retained.len() > self.capacity {
            log.retained.pop_front();
        }
        drop(log);
        self.grew.notify_all();
        seq
    }

    pub fn last_seq(&self) -> u64 {
        self.log.lock().unwrap().next_seq - 1
    }

    /// Retained events with `seq > since`, oldest first.
    pub fn since(&self, since: u64) -> Vec<Event> {
        let log = self.log.lock().unwrap();
        log.retained.iter().filter(|e| e.seq > since).cloned().collect()
    }

    /// Like [`since`](Self::since) but blocks up to `timeout` for the first new event.
    pub fn wait_since(&self, since: u64, timeout: Duration) -> Vec<Event> {
        let deadline = Instant::now() + timeout;
        let mut log = self.log.lock().unwrap();
        loop {
            if log.next_seq - 1 > since {
                return log.retained.iter().filter(|e| e.seq > since).cloned().collect();
            }
            let Some(left) = deadline.checked_duration_since(Instant::now()) else {
                return Vec::new();
            };
            log = self.grew.wait_timeout(log, left).unwrap().0;
        }
    }

    pub fn of_kind(&self, kind: EventKind) -> Vec<Event> {
        let log = self.log.lock().unwrap();
        log.retained.iter().filter(|e| e.kind == kind).cloned().collect()
    }
}
