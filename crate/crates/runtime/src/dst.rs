//! Demand Store Tier: serves store requests from the transport and turns
//! new procedural entries into work tokens on the function's queue.

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, Weak};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use eduction_core::{now_ms, DemandKind, DemandState, DemandStore, GlobalId, Millis, StateChange};
use eduction_resilience::Guard;
use eduction_transport::{reply, Delivery, EnvelopeKind, QueueMode, TransportAgent, TransportEnvelope};

use crate::dwt::{decode_procedure, encode_token, work_queue};
use crate::error::RuntimeError;
use crate::events::{EventBus, EventKind};
use crate::store_api::{handle, Request};

pub const STORE_QUEUE: &str = "dst";
const CONSUMER: &str = "dst";

/// Publishes work tokens and remembers when each entry last got one.
struct Dispatcher {
    store: Weak<DemandStore>,
    agent: Arc<dyn TransportAgent>,
    last_token: Mutex<HashMap<GlobalId, Millis>>,
}

impl Dispatcher {
    fn dispatch(&self, gid: GlobalId) {
        let Some(store) = self.store.upgrade() else {
            return;
        };
        let Some(entry) = store.get(gid) else {
            return;
        };
        let function = match decode_procedure(entry.demand.payload()) {
            Ok((f, _)) => f,
            Err(e) => {
                log::warn!("entry {gid} has no procedure: {e}");
                return;
            }
        };
        let env = TransportEnvelope::seal(
            EnvelopeKind::Demand,
            entry.signature.0,
            encode_token(gid, &function),
            self.agent.key(),
        );
        self.last_token.lock().unwrap().insert(gid, now_ms());
        if let Err(e) = self.agent.send(&work_queue(&function), &env) {
            log::warn!("work token for {gid}: {e}");
        }
    }

    fn on_change(&self, c: &StateChange) {
        if c.kind != DemandKind::Procedural {
            return;
        }
        match c.to {
            DemandState::Pending => self.dispatch(c.global_id),
            DemandState::Computed => {
                self.last_token.lock().unwrap().remove(&c.global_id);
            }
            DemandState::Processing => {}
        }
    }

    /// Re-sends tokens for entries left Pending longer than `after` since
    /// their last token.
    fn sweep(&self, store: &DemandStore, after: u64) {
        let now = now_ms();
        let stale: Vec<GlobalId> = {
            let last = self.last_token.lock().unwrap();
            store
                .entries(Some(DemandState::Pending))
                .into_iter()
                .filter(|e| e.demand.kind() == DemandKind::Procedural)
                .filter(|e| last.get(&e.global_id).map_or(true, |t| now.saturating_sub(*t) > after))
                .map(|e| e.global_id)
                .collect()
        };
        for gid in stale {
            self.dispatch(gid);
        }
    }
}

pub struct DstService {
    tier_id: String,
    store: Arc<DemandStore>,
    agent: Arc<dyn TransportAgent>,
    stop: Arc<AtomicBool>,
    handles: Mutex<Vec<JoinHandle<()>>>,
}

impl fmt::Debug for DstService {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DstService").field("tier_id", &self.tier_id).finish()
    }
}

impl DstService {
    pub fn start(
        tier_id: &str,
        store: Arc<DemandStore>,
        agent: Arc<dyn TransportAgent>,
        events: Option<Arc<EventBus>>,
        handlers: usize,
    ) -> Result<DstService, RuntimeError> {
        agent.subscribe(STORE_QUEUE, CONSUMER, QueueMode::Exclusive)?;
        let dispatcher = Arc::new(Dispatcher {
            store: Arc::downgrade(&store),
            agent: agent.clone(),
            last_token: Mutex::new(HashMap::new()),
        });
        {
            let dispatcher = dispatcher.clone();
            let events = events.clone();
            store.set_observer(Arc::new(move |c: &StateChange| {
                dispatcher.on_change(c);
                if let Some(ev) = &events {
                    ev.emit(
                        EventKind::DemandStateChanged,
                        [
                            ("global_id", c.global_id.to_string()),
                            ("kind", format!("{:?}", c.kind)),
                            ("from", c.from.map(|s| format!("{s:?}")).unwrap_or_default()),
                            ("to", format!("{:?}", c.to)),
                            ("worker", c.worker.clone().unwrap_or_default()),
                        ],
                    );
                }
            }));
        }
        let stop = Arc::new(AtomicBool::new(false));
        let guard = Arc::new(Guard::new(agent.key().clone()));
        let mut handles = Vec::new();
        for i in 0..handlers.max(1) {
            let (store, agent, stop, guard, events) =
                (store.clone(), agent.clone(), stop.clone(), guard.clone(), events.clone());
            handles.push(
                thread::Builder::new()
                    .name(format!("{tier_id}-req{i}"))
                    .spawn(move || serve(store, agent, stop, guard, events))
                    .map_err(|e| RuntimeError::Protocol(e.to_string()))?,
            );
        }
        {
            let (store, stop) = (store.clone(), stop.clone());
            let lease = store.config().lease_ms;
            let tick = Duration::from_millis((lease / 4).clamp(5, 250));
            handles.push(
                thread::Builder::new()
                    .name(format!("{tier_id}-leases"))
                    .spawn(move || {
                        let mut last_sweep = now_ms();
                        while !stop.load(Ordering::SeqCst) {
                            thread::sleep(tick);
                            let now = now_ms();
                            store.expire_leases(now);
                            if now.saturating_sub(last_sweep) >= lease {
                                dispatcher.sweep(&store, lease);
                                last_sweep = now;
                            }
                        }
                    })
                    .map_err(|e| RuntimeError::Protocol(e.to_string()))?,
            );
        }
        Ok(DstService {
            tier_id: tier_id.to_owned(),
            store,
            agent,
            stop,
            handles: Mutex::new(handles),
        })
    }

    pub fn tier_id(&self) -> &str {
        &self.tier_id
    }

    pub fn store(&self) -> &Arc<DemandStore> {
        &self.store
    }

    pub fn stop(&self) {
        self.stop.store(true, Ordering::SeqCst);
        for h in self.handles.lock().unwrap().drain(..) {
            let _ = h.join();
        }
        let _ = self.agent.unsubscribe(STORE_QUEUE, CONSUMER);
    }

    pub fn kill(&self) {
        self.stop.store(true, Ordering::SeqCst);
        self.agent.close();
    }
}

fn serve(
    store: Arc<DemandStore>,
    agent: Arc<dyn TransportAgent>,
    stop: Arc<AtomicBool>,
    guard: Arc<Guard>,
    events: Option<Arc<EventBus>>,
) {
    while !stop.load(Ordering::SeqCst) {
        let d = match agent.receive(STORE_QUEUE, CONSUMER, Duration::from_millis(100)) {
            Ok(Some(d)) => d,
            Ok(None) => continue,
            Err(e) => {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                log::debug!("store queue: {e}");
                thread::sleep(Duration::from_millis(50));
                continue;
            }
        };
        if !guard.admit(&d.envelope, |_| {}).accepted() {
            if let Some(ev) = &events {
                ev.emit(EventKind::MessageInsecure, [("queue", d.queue.clone())]);
            }
            let _ = agent.ack(CONSUMER, &d);
            continue;
        }
        let req = match Request::decode(&d.envelope.payload) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("dropping malformed store request: {e}");
                let _ = agent.ack(CONSUMER, &d);
                continue;
            }
        };
        if matches!(req, Request::Wait { .. }) {
            let (store, agent) = (store.clone(), agent.clone());
            thread::spawn(move || answer(&store, agent.as_ref(), &d, req));
        } else {
            answer(&store, agent.as_ref(), &d, req);
        }
    }
}

fn answer(store: &DemandStore, agent: &dyn TransportAgent, d: &Delivery, req: Request) {
    let resp = handle(store, req);
    let env = TransportEnvelope::seal(EnvelopeKind::Result, d.envelope.signature, resp.encode(), agent.key());
    if let Err(e) = reply(agent, d, &env) {
        log::warn!("store reply: {e}");
        return;
    }
    let _ = agent.ack(CONSUMER, d);
}
