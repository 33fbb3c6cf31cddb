//! The demand store: dispatch bookkeeping plus the memoizing value warehouse.
//!
//! Every mutating operation takes the store lock once, so checkout and
//! complete behave as compare-and-set steps on an entry's state.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::demand::{Demand, DemandEvent, DemandKind, DemandSignature, DemandState, Millis};
use crate::error::StoreError;

pub type GlobalId = Uuid;

pub const DEFAULT_LEASE_MS: u64 = 5000;
pub const DEFAULT_WAREHOUSE_CAPACITY: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GcPolicy {
    Lru,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreConfig {
    pub lease_ms: u64,
    pub warehouse_capacity: usize,
    pub gc_policy: GcPolicy,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            lease_ms: DEFAULT_LEASE_MS,
            warehouse_capacity: DEFAULT_WAREHOUSE_CAPACITY,
            gc_policy: GcPolicy::Lru,
        }
    }
}

impl StoreConfig {
    pub fn new(lease_ms: u64, warehouse_capacity: usize) -> Result<Self, String> {
        if lease_ms == 0 {
            return Err("lease_ms must be positive".into());
        }
        if warehouse_capacity == 0 {
            return Err("warehouse_capacity must be positive".into());
        }
        Ok(Self {
            lease_ms,
            warehouse_capacity,
            gc_policy: GcPolicy::Lru,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DispatchEntry {
    pub global_id: GlobalId,
    pub signature: DemandSignature,
    pub demand: Demand,
    pub state: DemandState,
    pub value: Option<Vec<u8>>,
    pub owner: Option<String>,
    pub lease_deadline: Option<Millis>,
    /// Deposit order; fixes the FIFO position even across redelivery.
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WarehouseEntry {
    pub value: Vec<u8>,
    pub stored_at: Millis,
    pub last_hit: Millis,
    pub hits: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Warehouse {
    entries: HashMap<DemandSignature, WarehouseEntry>,
    capacity: usize,
}

impl Warehouse {
    pub fn new(capacity: usize) -> Self {
        Self {
            entries: HashMap::new(),
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, sig: &DemandSignature) -> Option<&WarehouseEntry> {
        self.entries.get(sig)
    }

    pub(crate) fn entries_mut(&mut self) -> &mut HashMap<DemandSignature, WarehouseEntry> {
        &mut self.entries
    }

    fn lru_victim(&self) -> Option<DemandSignature> {
        self.entries
            .iter()
            .min_by_key(|(sig, e)| (e.last_hit, e.stored_at, **sig))
            .map(|(sig, _)| *sig)
    }
}

/// Outcome of [`DemandStore::deposit`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Deposit {
    pub global_id: GlobalId,
    pub already_computed: Option<Vec<u8>>,
    /// True when this call registered new work.
    pub created: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Checkout {
    pub global_id: GlobalId,
    pub demand: Demand,
}

/// Outcome of a targeted claim of one entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Claim {
    Claimed(Demand),
    Busy { owner: String },
    Computed(Vec<u8>),
}

/// A state change observed by the store, reported after the lock is released.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateChange {
    pub global_id: GlobalId,
    pub signature: DemandSignature,
    pub kind: DemandKind,
    pub from: Option<DemandState>,
    pub to: DemandState,
    pub worker: Option<String>,
}

pub type StateObserver = Arc<dyn Fn(&StateChange) + Send + Sync>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreStats {
    pub deposits: u64,
    pub created: u64,
    pub checkouts: u64,
    pub completions: u64,
    pub hits: u64,
    pub misses: u64,
    pub redeliveries: u64,
    pub evictions: u64,
}

#[derive(Debug)]
pub(crate) struct Inner {
    pub(crate) entries: HashMap<GlobalId, DispatchEntry>,
    pub(crate) by_signature: HashMap<DemandSignature, GlobalId>,
    pub(crate) pending: BTreeMap<u64, GlobalId>,
    pub(crate) next_seq: u64,
    pub(crate) warehouse: Warehouse,
    pub(crate) stats: StoreStats,
}

impl Inner {
    pub(crate) fn new(capacity: usize) -> Self {
        Self {
            entries: HashMap::new(),
            by_signature: HashMap::new(),
            pending: BTreeMap::new(),
            next_seq: 0,
            warehouse: Warehouse::new(capacity),
            stats: StoreStats::default(),
        }
    }

    fn warehouse(&mut self) -> &mut Warehouse {
        &mut self.warehouse
    }
}

pub struct DemandStore {
    config: StoreConfig,
    inner: Mutex<Inner>,
    changed: Condvar,
    observer: Mutex<Option<StateObserver>>,
}

impl std::fmt::Debug for DemandStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DemandStore")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl DemandStore {
    pub fn new(config: StoreConfig) -> Self {
        let inner = Inner::new(config.warehouse_capacity);
        Self::from_inner(config, inner)
    }

    pub(crate) fn from_inner(config: StoreConfig, inner: Inner) -> Self {
        Self {
            config,
            inner: Mutex::new(inner),
            changed: Condvar::new(),
            observer: Mutex::new(None),
        }
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn set_observer(&self, observer: StateObserver) {
        *self.observer.lock().unwrap() = Some(observer);
    }

    pub(crate) fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn publish(&self, changes: Vec<StateChange>) {
        if changes.is_empty() {
            return;
        }
        self.changed.notify_all();
        let observer = self.observer.lock().unwrap().clone();
        if let Some(obs) = observer {
            for c in &changes {
                obs(c);
            }
        }
    }

    /// Registers a demand, collapsing it onto any existing entry with the
    /// same signature.
    pub fn deposit(&self, demand: Demand) -> Result<Deposit, StoreError> {
        if demand.state() != DemandState::Pending {
            return Err(StoreError::NotPending(demand.state()));
        }
        let sig = demand.signature();
        let mut inner = self.lock();
        inner.stats.deposits += 1;
        if let Some(&gid) = inner.by_signature.get(&sig) {
            let entry = &inner.entries[&gid];
            return Ok(Deposit {
                global_id: gid,
                already_computed: entry.value.clone(),
                created: false,
            });
        }
        let gid = Uuid::new_v4();
        let seq = inner.next_seq;
        inner.next_seq += 1;
        let kind = demand.kind();
        inner.entries.insert(
            gid,
            DispatchEntry {
                global_id: gid,
                signature: sig,
                demand,
                state: DemandState::Pending,
                value: None,
                owner: None,
                lease_deadline: None,
                seq,
            },
        );
        inner.by_signature.insert(sig, gid);
        inner.pending.insert(seq, gid);
        inner.stats.created += 1;
        drop(inner);
        self.publish(vec![StateChange {
            global_id: gid,
            signature: sig,
            kind,
            from: None,
            to: DemandState::Pending,
            worker: None,
        }]);
        Ok(Deposit {
            global_id: gid,
            already_computed: None,
            created: true,
        })
    }

    /// Takes the oldest Pending entry.
    pub fn checkout(&self, worker_id: &str, now: Millis) -> Option<Checkout> {
        self.checkout_matching(worker_id, now, |_| true)
    }

    /// Takes the oldest Pending entry whose demand satisfies `filter`.
    pub fn checkout_matching<F>(&self, worker_id: &str, now: Millis, filter: F) -> Option<Checkout>
    where
        F: Fn(&Demand) -> bool,
    {
        let mut inner = self.lock();
        let (seq, gid) = inner
            .pending
            .iter()
            .map(|(s, g)| (*s, *g))
            .find(|(_, g)| filter(&inner.entries[g].demand))?;
        inner.pending.remove(&seq);
        let checkout = self.start_processing(&mut inner, gid, worker_id, now);
        inner.stats.checkouts += 1;
        drop(inner);
        self.publish(vec![checkout.1]);
        Some(checkout.0)
    }

    fn start_processing(
        &self,
        inner: &mut Inner,
        gid: GlobalId,
        worker_id: &str,
        now: Millis,
    ) -> (Checkout, StateChange) {
        let lease = self.config.lease_ms;
        let entry = inner.entries.get_mut(&gid).expect("pending entry exists");
        entry
            .demand
            .apply(DemandEvent::Dispatch)
            .expect("pending entries can be dispatched");
        entry.state = DemandState::Processing;
        entry.owner = Some(worker_id.to_owned());
        entry.lease_deadline = Some(now.saturating_add(lease));
        entry.demand.append_timeline_clamped(worker_id, now);
        (
            Checkout {
                global_id: gid,
                demand: entry.demand.clone(),
            },
            StateChange {
                global_id: gid,
                signature: entry.signature,
                kind: entry.demand.kind(),
                from: Some(DemandState::Pending),
                to: DemandState::Processing,
                worker: Some(worker_id.to_owned()),
            },
        )
    }

    /// Targeted checkout of one known entry.
    pub fn claim(&self, global_id: GlobalId, worker_id: &str, now: Millis) -> Result<Claim, StoreError> {
        let mut inner = self.lock();
        let entry = inner
            .entries
            .get(&global_id)
            .ok_or(StoreError::UnknownEntry(global_id))?;
        match entry.state {
            DemandState::Computed => Ok(Claim::Computed(entry.value.clone().unwrap_or_default())),
            DemandState::Processing => Ok(Claim::Busy {
                owner: entry.owner.clone().unwrap_or_default(),
            }),
            DemandState::Pending => {
                let seq = entry.seq;
                inner.pending.remove(&seq);
                let (co, change) = self.start_processing(&mut inner, global_id, worker_id, now);
                inner.stats.checkouts += 1;
                drop(inner);
                self.publish(vec![change]);
                Ok(Claim::Claimed(co.demand))
            }
        }
    }

    /// Stores the result of an entry.
    ///
    /// A second completion with byte-equal value is a no-op. An entry whose
    /// lease already expired (back to Pending, no owner) accepts the result.
    pub fn complete(
        &self,
        global_id: GlobalId,
        worker_id: &str,
        value: Vec<u8>,
        now: Millis,
    ) -> Result<(), StoreError> {
        let mut inner = self.lock();
        let entry = inner
            .entries
            .get_mut(&global_id)
            .ok_or(StoreError::UnknownEntry(global_id))?;
        let from = entry.state;
        match from {
            DemandState::Computed => {
                return if entry.value.as_deref() == Some(value.as_slice()) {
                    Ok(())
                } else {
                    Err(StoreError::InconsistentResult(global_id))
                };
            }
            DemandState::Processing => {
                if entry.owner.as_deref() != Some(worker_id) {
                    return Err(StoreError::NotOwner {
                        id: global_id,
                        worker: worker_id.to_owned(),
                    });
                }
            }
            DemandState::Pending => {
                entry.demand.apply(DemandEvent::Dispatch)?;
                entry.demand.append_timeline_clamped(worker_id, now);
            }
        }
        entry.demand.apply(DemandEvent::ResultStored)?;
        entry.state = DemandState::Computed;
        entry.value = Some(value.clone());
        entry.owner = None;
        entry.lease_deadline = None;
        let (sig, seq, kind) = (entry.signature, entry.seq, entry.demand.kind());
        inner.pending.remove(&seq);
        inner.warehouse().entries.insert(
            sig,
            WarehouseEntry {
                value,
                stored_at: now,
                last_hit: now,
                hits: 0,
            },
        );
        inner.stats.completions += 1;
        drop(inner);
        self.publish(vec![StateChange {
            global_id,
            signature: sig,
            kind,
            from: Some(from),
            to: DemandState::Computed,
            worker: Some(worker_id.to_owned()),
        }]);
        Ok(())
    }

    /// Warehouse lookup. A hit bumps the hit counter, the last-hit time and
    /// the demand's access number; a miss changes nothing.
    pub fn lookup(&self, signature: &DemandSignature, now: Millis) -> Option<Vec<u8>> {
        let mut inner = self.lock();
        let value = match inner.warehouse().entries.get_mut(signature) {
            Some(w) => {
                w.hits += 1;
                w.last_hit = w.last_hit.max(now);
                w.value.clone()
            }
            None => {
                inner.stats.misses += 1;
                return None;
            }
        };
        inner.stats.hits += 1;
        if let Some(gid) = inner.by_signature.get(signature).copied() {
            if let Some(e) = inner.entries.get_mut(&gid) {
                e.demand.record_access();
            }
        }
        Some(value)
    }

    /// Reverts every Processing entry whose lease ended before `now`.
    pub fn expire_leases(&self, now: Millis) -> Vec<GlobalId> {
        let mut inner = self.lock();
        let expired: Vec<GlobalId> = inner
            .entries
            .values()
            .filter(|e| e.state == DemandState::Processing)
            .filter(|e| e.lease_deadline.is_some_and(|d| d < now))
            .map(|e| e.global_id)
            .collect();
        let mut changes = Vec::with_capacity(expired.len());
        for gid in &expired {
            let entry = inner.entries.get_mut(gid).expect("listed above");
            let _ = entry.demand.apply(DemandEvent::WorkerLost);
            entry.state = DemandState::Pending;
            let worker = entry.owner.take();
            entry.lease_deadline = None;
            let seq = entry.seq;
            changes.push(StateChange {
                global_id: *gid,
                signature: entry.signature,
                kind: entry.demand.kind(),
                from: Some(DemandState::Processing),
                to: DemandState::Pending,
                worker,
            });
            inner.pending.insert(seq, *gid);
        }
        inner.stats.redeliveries += expired.len() as u64;
        drop(inner);
        self.publish(changes);
        expired
    }

    /// Evicts least-recently-hit values until the warehouse fits its capacity.
    /// Evicted signatures lose their dispatch entry so they can be recomputed.
    pub fn gc(&self, _now: Millis) -> usize {
        let mut inner = self.lock();
        let mut evicted = 0;
        while inner.warehouse().len() > inner.warehouse().capacity() {
            let Some(sig) = inner.warehouse().lru_victim() else {
                break;
            };
            inner.warehouse().entries.remove(&sig);
            if let Some(gid) = inner.by_signature.remove(&sig) {
                inner.entries.remove(&gid);
            }
            evicted += 1;
        }
        inner.stats.evictions += evicted as u64;
        evicted
    }

    pub fn get(&self, global_id: GlobalId) -> Option<DispatchEntry> {
        self.lock().entries.get(&global_id).cloned()
    }

    pub fn entry_for(&self, signature: &DemandSignature) -> Option<DispatchEntry> {
        let inner = self.lock();
        let gid = inner.by_signature.get(signature)?;
        inner.entries.get(gid).cloned()
    }

    /// Entries in deposit order, optionally filtered by state.
    pub fn entries(&self, state: Option<DemandState>) -> Vec<DispatchEntry> {
        let inner = self.lock();
        let mut out: Vec<_> = inner
            .entries
            .values()
            .filter(|e| state.map_or(true, |s| e.state == s))
            .cloned()
            .collect();
        out.sort_by_key(|e| e.seq);
        out
    }

    pub fn warehouse_entry(&self, signature: &DemandSignature) -> Option<WarehouseEntry> {
        self.lock().warehouse().get(signature).cloned()
    }

    pub fn warehouse_len(&self) -> usize {
        self.lock().warehouse().len()
    }

    pub fn stats(&self) -> StoreStats {
        self.lock().stats
    }

    /// Blocks until the entry is Computed or the timeout elapses.
    pub fn wait_computed(&self, global_id: GlobalId, timeout: Duration) -> Option<Vec<u8>> {
        let deadline = Instant::now() + timeout;
        let mut inner = self.lock();
        loop {
            if let Some(v) = inner.entries.get(&global_id).and_then(|e| e.value.clone()) {
                return Some(v);
            }
            let left = deadline.checked_duration_since(Instant::now())?;
            inner = self
                .changed
                .wait_timeout(inner, left)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }
}
