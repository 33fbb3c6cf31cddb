//! Demand Worker Tier: takes work tokens from the broker, claims the named
//! entry, runs the bound worker function and stores the outcome.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use eduction_core::codec::{Decoder, Encoder};
use eduction_core::{Claim, GlobalId};
use eduction_resilience::Guard;
use eduction_transport::{Delivery, EnvelopeKind, QueueMode, TransportAgent, TransportEnvelope};
use uuid::Uuid;

use crate::error::{RuntimeError, StoreFault};
use crate::events::{EventBus, EventKind};
use crate::store_api::{outcome, StoreApi};

pub const HEARTBEAT_QUEUE: &str = "gmt.heartbeat";

pub fn work_queue(function: &str) -> String {
    format!("work.{function}")
}

/// What a worker function can see of the tier running it.
#[derive(Debug, Clone, Copy)]
pub struct WorkerCtx<'a> {
    pub tier_id: &'a str,
}

pub type WorkerFn = Arc<dyn Fn(&WorkerCtx<'_>, &[Vec<u8>]) -> Result<Vec<u8>, String> + Send + Sync>;

/// Named worker functions a DWT can be bound to.
#[derive(Clone, Default)]
pub struct FunctionTable {
    fns: BTreeMap<String, WorkerFn>,
}

impl fmt::Debug for FunctionTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.fns.keys()).finish()
    }
}

impl FunctionTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register<F>(&mut self, name: &str, f: F) -> &mut Self
    where
        F: Fn(&WorkerCtx<'_>, &[Vec<u8>]) -> Result<Vec<u8>, String> + Send + Sync + 'static,
    {
        self.fns.insert(name.to_owned(), Arc::new(f));
        self
    }

    pub fn get(&self, name: &str) -> Option<&WorkerFn> {
        self.fns.get(name)
    }

    pub fn names(&self) -> Vec<String> {
        self.fns.keys().cloned().collect()
    }

    /// `scale2`, `scale3`, `scale5` over one big-endian i64.
    pub fn register_hamming(&mut self) -> &mut Self {
        for k in [2i64, 3, 5] {
            self.register(&format!("scale{k}"), move |_, args| {
                let [x] = args else {
                    return Err(format!("scale{k} takes one argument"));
                };
                let x = decode_int(x)?;
                x.checked_mul(k).map(encode_int).ok_or_else(|| format!("overflow in scale{k}"))
            });
        }
        self
    }
}

pub fn encode_int(v: i64) -> Vec<u8> {
    v.to_be_bytes().to_vec()
}

pub fn decode_int(b: &[u8]) -> Result<i64, String> {
    let arr: [u8; 8] = b.try_into().map_err(|_| format!("expected 8 bytes, got {}", b.len()))?;
    Ok(i64::from_be_bytes(arr))
}

const PROCEDURE_VERSION: u8 = 1;

/// Payload of a procedural demand: the function name and its arguments.
pub fn procedure_payload(function: &str, args: &[Vec<u8>]) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.u8(PROCEDURE_VERSION).str(function).u32(args.len() as u32);
    for a in args {
        enc.bytes(a);
    }
    enc.finish()
}

pub fn decode_procedure(payload: &[u8]) -> Result<(String, Vec<Vec<u8>>), RuntimeError> {
    let mut dec = Decoder::new(payload);
    dec.expect_version(PROCEDURE_VERSION)?;
    let function = dec.str()?.to_owned();
    let n = dec.u32()? as usize;
    let mut args = Vec::with_capacity(n.min(64));
    for _ in 0..n {
        args.push(dec.bytes()?.to_vec());
    }
    dec.finish()?;
    Ok((function, args))
}

/// A work token names one dispatch entry.
pub fn encode_token(global_id: GlobalId, function: &str) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.raw(global_id.as_bytes()).str(function);
    enc.finish()
}

pub fn decode_token(payload: &[u8]) -> Result<(GlobalId, String), RuntimeError> {
    let mut dec = Decoder::new(payload);
    let gid = Uuid::from_bytes(dec.array()?);
    let function = dec.str()?.to_owned();
    dec.finish()?;
    Ok((gid, function))
}

pub fn encode_heartbeat(node_id: &str, tier_id: &str) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.str(node_id).str(tier_id);
    enc.finish()
}

pub fn decode_heartbeat(payload: &[u8]) -> Result<(String, String), RuntimeError> {
    let mut dec = Decoder::new(payload);
    let node = dec.str()?.to_owned();
    let tier = dec.str()?.to_owned();
    dec.finish()?;
    Ok((node, tier))
}

/// Sends `(node, tier)` beats to the GMT until `stop` is set.
pub fn spawn_heartbeat(
    agent: Arc<dyn TransportAgent>,
    node_id: String,
    tier_id: String,
    every: Duration,
    stop: Arc<AtomicBool>,
) -> JoinHandle<()> {
    thread::Builder::new()
        .name(format!("beat-{tier_id}"))
        .spawn(move || {
            let payload = encode_heartbeat(&node_id, &tier_id);
            while !stop.load(Ordering::SeqCst) {
                let env = TransportEnvelope::seal(EnvelopeKind::Control, rand::random(), payload.clone(), agent.key());
                if let Err(e) = agent.send(HEARTBEAT_QUEUE, &env) {
                    log::debug!("heartbeat from {tier_id}: {e}");
                }
                thread::sleep(every);
            }
        })
        .expect("spawn heartbeat thread")
}

struct Shared {
    tier_id: String,
    agent: Arc<dyn TransportAgent>,
    store: Arc<dyn StoreApi>,
    table: FunctionTable,
    guard: Guard,
    events: Option<Arc<EventBus>>,
    stop: Arc<AtomicBool>,
    killed: AtomicBool,
    completed: AtomicU64,
    inconsistent: AtomicU64,
    bound: Mutex<BTreeSet<String>>,
}

pub struct Dwt {
    shared: Arc<Shared>,
    handles: Mutex<Vec<JoinHandle<()>>>,
}

impl fmt::Debug for Dwt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Dwt")
            .field("tier_id", &self.shared.tier_id)
            .field("bound", &self.bound())
            .finish()
    }
}

impl Dwt {
    pub fn start(
        tier_id: &str,
        agent: Arc<dyn TransportAgent>,
        store: Arc<dyn StoreApi>,
        table: FunctionTable,
        events: Option<Arc<EventBus>>,
    ) -> Dwt {
        let guard = Guard::new(agent.key().clone());
        Dwt {
            shared: Arc::new(Shared {
                tier_id: tier_id.to_owned(),
                agent,
                store,
                table,
                guard,
                events,
                stop: Arc::new(AtomicBool::new(false)),
                killed: AtomicBool::new(false),
                completed: AtomicU64::new(0),
                inconsistent: AtomicU64::new(0),
                bound: Mutex::new(BTreeSet::new()),
            }),
            handles: Mutex::new(Vec::new()),
        }
    }

    pub fn tier_id(&self) -> &str {
        &self.shared.tier_id
    }

    /// Subscribes to the function's work queue and starts serving it.
    pub fn bind(&self, function: &str) -> Result<(), RuntimeError> {
        if !self.shared.bound.lock().unwrap().insert(function.to_owned()) {
            return Ok(());
        }
        let queue = work_queue(function);
        self.shared
            .agent
            .subscribe(&queue, &self.shared.tier_id, QueueMode::Shared)?;
        let shared = self.shared.clone();
        let h = thread::Builder::new()
            .name(format!("{}-{function}", shared.tier_id))
            .spawn(move || serve(shared, queue))
            .map_err(|e| RuntimeError::Protocol(e.to_string()))?;
        self.handles.lock().unwrap().push(h);
        Ok(())
    }

    pub fn beat(&self, node_id: &str, every: Duration) {
        let h = spawn_heartbeat(
            self.shared.agent.clone(),
            node_id.to_owned(),
            self.shared.tier_id.clone(),
            every,
            self.shared.stop.clone(),
        );
        self.handles.lock().unwrap().push(h);
    }

    pub fn bound(&self) -> Vec<String> {
        self.shared.bound.lock().unwrap().iter().cloned().collect()
    }

    pub fn completed(&self) -> u64 {
        self.shared.completed.load(Ordering::SeqCst)
    }

    /// Completions the store refused because a different value was stored.
    pub fn inconsistent(&self) -> u64 {
        self.shared.inconsistent.load(Ordering::SeqCst)
    }

    /// Finishes the current demand, then leaves its queues.
    pub fn stop(&self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        for h in self.handles.lock().unwrap().drain(..) {
            let _ = h.join();
        }
        for f in self.bound() {
            let _ = self.shared.agent.unsubscribe(&work_queue(&f), &self.shared.tier_id);
        }
    }

    /// Abrupt loss: nothing in flight is completed or acknowledged, and the
    /// broker connection drops.
    pub fn kill(&self) {
        self.shared.killed.store(true, Ordering::SeqCst);
        self.shared.stop.store(true, Ordering::SeqCst);
        self.shared.agent.close();
    }
}

fn serve(shared: Arc<Shared>, queue: String) {
    while !shared.stop.load(Ordering::SeqCst) {
        match shared
            .agent
            .receive(&queue, &shared.tier_id, Duration::from_millis(100))
        {
            Ok(Some(d)) => {
                if process(&shared, &d) && !shared.killed.load(Ordering::SeqCst) {
                    if let Err(e) = shared.agent.ack(&shared.tier_id, &d) {
                        log::warn!("{} ack: {e}", shared.tier_id);
                    }
                }
            }
            Ok(None) => {}
            Err(e) => {
                if shared.stop.load(Ordering::SeqCst) {
                    break;
                }
                log::debug!("{} receive: {e}", shared.tier_id);
                thread::sleep(Duration::from_millis(50));
            }
        }
    }
}

/// Returns whether the token is finished with and can be acknowledged.
fn process(shared: &Shared, d: &Delivery) -> bool {
    let tier = shared.tier_id.as_str();
    if !shared.guard.admit(&d.envelope, |_| {}).accepted() {
        if let Some(ev) = &shared.events {
            ev.emit(
                EventKind::MessageInsecure,
                [("tier_id", tier.to_owned()), ("queue", d.queue.clone())],
            );
        }
        return true;
    }
    let Ok((gid, _)) = decode_token(&d.envelope.payload) else {
        return true;
    };
    let demand = match shared.store.claim(gid, tier) {
        Ok(Claim::Claimed(demand)) => demand,
        Ok(_) => return true,
        Err(e) => {
            log::warn!("{tier} claim {gid}: {e}");
            return !matches!(e, RuntimeError::Transport(_) | RuntimeError::Timeout(_));
        }
    };
    let value = match decode_procedure(demand.payload()) {
        Ok((function, args)) => match shared.table.get(&function) {
            Some(f) => match f(&WorkerCtx { tier_id: tier }, &args) {
                Ok(v) => outcome::ok(&v),
                Err(reason) => outcome::failed(&reason),
            },
            None => outcome::failed(&format!("no worker function `{function}`")),
        },
        Err(e) => outcome::failed(&e.to_string()),
    };
    if shared.killed.load(Ordering::SeqCst) {
        return false;
    }
    match shared.store.complete(gid, tier, &value) {
        Ok(()) => {
            shared.completed.fetch_add(1, Ordering::SeqCst);
            true
        }
        Err(e) => match e.store_fault() {
            Some(StoreFault::InconsistentResult) => {
                shared.inconsistent.fetch_add(1, Ordering::SeqCst);
                true
            }
            Some(_) => true,
            None => {
                log::warn!("{tier} complete {gid}: {e}");
                false
            }
        },
    }
}
