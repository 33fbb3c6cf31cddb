//! The transport agent contract and its failover-capable implementation.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, Weak};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crate::broker::{Delivery, Message, MessageId, QueueMode};
use crate::envelope::{MacKey, TransportEnvelope, DEFAULT_MAX_PAYLOAD};
use crate::error::TransportError;

pub const IMPLEMENTATION_KEY: &str = "gipsy.GEE.TA.implementation";
pub const PRIMARY_KEY: &str = "primary";
pub const SECONDARY_KEY: &str = "secondary";
pub const QUEUE_KEY: &str = "queue";
pub const KEY_ID_KEY: &str = "key_id";
pub const SECRET_KEY: &str = "secret";
pub const MAX_FRAME_KEY: &str = "max_frame";
pub const HEARTBEAT_KEY: &str = "heartbeat_ms";

pub const INPROC: &str = "inproc";
pub const TCP_BROKER: &str = "tcp-broker";

pub const DEFAULT_HEARTBEAT: Duration = Duration::from_millis(500);
/// Consecutive missed heartbeats before the agent rebinds.
pub const MISSED_BEATS_BEFORE_FAILOVER: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BrokerRole {
    Primary,
    Secondary,
}

impl BrokerRole {
    pub fn other(self) -> Self {
        match self {
            BrokerRole::Primary => BrokerRole::Secondary,
            BrokerRole::Secondary => BrokerRole::Primary,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BrokerRole::Primary => "primary",
            BrokerRole::Secondary => "secondary",
        }
    }
}

/// Endpoint properties, as found in a `.properties` configuration.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EndpointConfig {
    pub properties: BTreeMap<String, String>,
}

impl EndpointConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(mut self, key: &str, value: impl Into<String>) -> Self {
        self.properties.insert(key.to_owned(), value.into());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.properties.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str, TransportError> {
        self.get(key)
            .ok_or_else(|| TransportError::MissingProperty(key.to_owned()))
    }

    pub fn inproc(primary: &str) -> Self {
        Self::new().set(IMPLEMENTATION_KEY, INPROC).set(PRIMARY_KEY, primary)
    }

    pub fn tcp(primary: &str) -> Self {
        Self::new()
            .set(IMPLEMENTATION_KEY, TCP_BROKER)
            .set(PRIMARY_KEY, primary)
    }

    /// The instance MAC key: derived from `secret`, else from `key_id`.
    pub fn mac_key(&self) -> MacKey {
        match self.get(SECRET_KEY) {
            Some(secret) => MacKey::from_secret(secret),
            None => MacKey::from_secret(self.get(KEY_ID_KEY).unwrap_or("default")),
        }
    }

    pub fn max_payload(&self) -> usize {
        self.get(MAX_FRAME_KEY)
            .and_then(|v| v.parse().ok())
            .unwrap_or(DEFAULT_MAX_PAYLOAD)
    }

    pub fn heartbeat(&self) -> Duration {
        self.get(HEARTBEAT_KEY)
            .and_then(|v| v.parse().ok())
            .map(Duration::from_millis)
            .unwrap_or(DEFAULT_HEARTBEAT)
    }
}

/// The contract every transport implementation fulfils.
pub trait TransportAgent: Send + Sync {
    fn implementation(&self) -> &'static str;

    fn key(&self) -> &MacKey;

    fn max_payload(&self) -> usize;

    fn subscribe(&self, queue: &str, consumer: &str, mode: QueueMode) -> Result<(), TransportError>;

    /// Detaches a consumer; its unacknowledged deliveries are redelivered.
    fn unsubscribe(&self, queue: &str, consumer: &str) -> Result<(), TransportError>;

    fn publish(
        &self,
        queue: &str,
        envelope: &TransportEnvelope,
        reply_to: Option<&str>,
    ) -> Result<(), TransportError>;

    /// Returns once the envelope is enqueued on the live broker.
    fn send(&self, queue: &str, envelope: &TransportEnvelope) -> Result<(), TransportError> {
        self.publish(queue, envelope, None)
    }

    fn receive(
        &self,
        queue: &str,
        consumer: &str,
        timeout: Duration,
    ) -> Result<Option<Delivery>, TransportError>;

    fn ack(&self, consumer: &str, delivery: &Delivery) -> Result<(), TransportError>;

    /// Which broker the agent is bound to right now.
    fn failover_probe(&self) -> BrokerRole;

    /// Drops the connection; the broker redelivers everything unacknowledged.
    fn close(&self);
}

/// Answers a request delivery on its reply queue.
pub fn reply(
    agent: &dyn TransportAgent,
    request: &Delivery,
    response: &TransportEnvelope,
) -> Result<(), TransportError> {
    let to = request
        .reply_to
        .as_deref()
        .ok_or(TransportError::NoReplyQueue)?;
    agent.send(to, response)
}

/// One-shot synchronous request/response: blocks until a RESULT with the
/// request's signature arrives or `timeout` elapses.
pub fn sync_call(
    agent: Arc<dyn TransportAgent>,
    queue: &str,
    request: &TransportEnvelope,
    timeout: Duration,
) -> Result<TransportEnvelope, TransportError> {
    let client = RpcClient::new(agent)?;
    client.call(queue, request, timeout)
}

/// A single connection to one broker.
pub(crate) trait Link: Send + Sync {
    fn subscribe(&self, queue: &str, consumer: &str, mode: QueueMode) -> Result<(), TransportError>;
    fn unsubscribe(&self, queue: &str, consumer: &str) -> Result<(), TransportError>;
    fn publish(&self, queue: &str, message: Message) -> Result<(), TransportError>;
    fn receive(
        &self,
        queue: &str,
        consumer: &str,
        timeout: Duration,
    ) -> Result<Option<Delivery>, TransportError>;
    fn ack(&self, queue: &str, consumer: &str, id: MessageId) -> Result<(), TransportError>;
    fn heartbeat(&self, timeout: Duration) -> Result<(), TransportError>;
    fn close(&self);
}

pub(crate) trait Connector: Send + Sync {
    fn connect(&self, role: BrokerRole) -> Result<Arc<dyn Link>, TransportError>;
    fn has(&self, role: BrokerRole) -> bool;
}

struct Binding {
    link: Option<Arc<dyn Link>>,
    role: BrokerRole,
    generation: u64,
}

struct Shared {
    connector: Box<dyn Connector>,
    binding: Mutex<Binding>,
    subscriptions: Mutex<BTreeMap<(String, String), QueueMode>>,
    closed: AtomicBool,
}

impl Shared {
    fn current(&self) -> (Option<Arc<dyn Link>>, u64) {
        let b = self.binding.lock().unwrap();
        (b.link.clone(), b.generation)
    }

    /// Rebinds away from generation `seen`. No-op if another caller already did.
    fn failover(&self, seen: u64) -> Result<(), TransportError> {
        let mut b = self.binding.lock().unwrap();
        if b.generation != seen && b.link.is_some() {
            return Ok(());
        }
        let order = if b.link.is_none() && b.generation == 0 {
            [BrokerRole::Primary, BrokerRole::Secondary]
        } else {
            [b.role.other(), b.role]
        };
        if let Some(old) = b.link.take() {
            old.close();
        }
        b.generation += 1;
        for role in order {
            if !self.connector.has(role) {
                continue;
            }
            let Ok(link) = self.connector.connect(role) else {
                continue;
            };
            let subs = self.subscriptions.lock().unwrap().clone();
            let resubscribed = subs
                .iter()
                .all(|((q, c), mode)| link.subscribe(q, c, *mode).is_ok());
            if !resubscribed {
                link.close();
                continue;
            }
            if role != b.role {
                log::warn!("transport agent failed over to {} broker", role.as_str());
            }
            b.role = role;
            b.link = Some(link);
            return Ok(());
        }
        Err(TransportError::AllBrokersDown)
    }

    fn with_link<T>(
        &self,
        op: impl Fn(&dyn Link) -> Result<T, TransportError>,
    ) -> Result<T, TransportError> {
        for _ in 0..3 {
            let (link, generation) = self.current();
            let Some(link) = link else {
                self.failover(generation)?;
                continue;
            };
            match op(link.as_ref()) {
                Err(e) if e.is_connection_loss() => self.failover(generation)?,
                other => return other,
            }
        }
        Err(TransportError::AllBrokersDown)
    }
}

/// Transport agent bound to a primary broker with an optional secondary.
///
/// The binding moves to the other broker only when the current one stops
/// answering: a failed call, or [`MISSED_BEATS_BEFORE_FAILOVER`] missed
/// heartbeats in a row.
pub struct FailoverAgent {
    implementation: &'static str,
    key: MacKey,
    max_payload: usize,
    shared: Arc<Shared>,
    heartbeat: Option<JoinHandle<()>>,
}

impl FailoverAgent {
    pub(crate) fn new(
        implementation: &'static str,
        config: &EndpointConfig,
        connector: Box<dyn Connector>,
    ) -> Self {
        let shared = Arc::new(Shared {
            connector,
            binding: Mutex::new(Binding {
                link: None,
                role: BrokerRole::Primary,
                generation: 0,
            }),
            subscriptions: Mutex::new(BTreeMap::new()),
            closed: AtomicBool::new(false),
        });
        // Lazy: a broker that is down now may be reachable on first use.
        let _ = shared.failover(0);
        let interval = config.heartbeat();
        let weak = Arc::downgrade(&shared);
        let heartbeat = thread::Builder::new()
            .name("ta-heartbeat".into())
            .spawn(move || heartbeat_loop(weak, interval))
            .ok();
        Self {
            implementation,
            key: config.mac_key(),
            max_payload: config.max_payload(),
            shared,
            heartbeat,
        }
    }
}

fn heartbeat_loop(shared: Weak<Shared>, interval: Duration) {
    let mut missed = 0u32;
    loop {
        thread::sleep(interval);
        let Some(shared) = shared.upgrade() else {
            return;
        };
        if shared.closed.load(Ordering::SeqCst) {
            return;
        }
        let (link, generation) = shared.current();
        let ok = link.is_some_and(|l| l.heartbeat(interval).is_ok());
        if ok {
            missed = 0;
            continue;
        }
        missed += 1;
        if missed >= MISSED_BEATS_BEFORE_FAILOVER {
            missed = 0;
            let _ = shared.failover(generation);
        }
    }
}

impl Drop for FailoverAgent {
    fn drop(&mut self) {
        self.close();
        // The heartbeat thread exits on its next tick.
        drop(self.heartbeat.take());
    }
}

impl TransportAgent for FailoverAgent {
    fn implementation(&self) -> &'static str {
        self.implementation
    }

    fn key(&self) -> &MacKey {
        &self.key
    }

    fn max_payload(&self) -> usize {
        self.max_payload
    }

    fn subscribe(&self, queue: &str, consumer: &str, mode: QueueMode) -> Result<(), TransportError> {
        self.shared.with_link(|l| l.subscribe(queue, consumer, mode))?;
        self.shared
            .subscriptions
            .lock()
            .unwrap()
            .insert((queue.to_owned(), consumer.to_owned()), mode);
        Ok(())
    }

    fn unsubscribe(&self, queue: &str, consumer: &str) -> Result<(), TransportError> {
        self.shared
            .subscriptions
            .lock()
            .unwrap()
            .remove(&(queue.to_owned(), consumer.to_owned()));
        self.shared.with_link(|l| l.unsubscribe(queue, consumer))
    }

    fn publish(
        &self,
        queue: &str,
        envelope: &TransportEnvelope,
        reply_to: Option<&str>,
    ) -> Result<(), TransportError> {
        if envelope.payload.len() > self.max_payload {
            return Err(TransportError::FrameTooLarge {
                size: envelope.payload.len(),
                max: self.max_payload,
            });
        }
        // One id per logical send, so a retry after failover is deduplicated.
        let message = Message {
            id: rand::random(),
            envelope: envelope.clone(),
            reply_to: reply_to.map(str::to_owned),
        };
        self.shared.with_link(|l| l.publish(queue, message.clone()))
    }

    fn receive(
        &self,
        queue: &str,
        consumer: &str,
        timeout: Duration,
    ) -> Result<Option<Delivery>, TransportError> {
        self.shared.with_link(|l| l.receive(queue, consumer, timeout))
    }

    fn ack(&self, consumer: &str, delivery: &Delivery) -> Result<(), TransportError> {
        self.shared
            .with_link(|l| l.ack(&delivery.queue, consumer, delivery.id))
    }

    fn failover_probe(&self) -> BrokerRole {
        self.shared.binding.lock().unwrap().role
    }

    fn close(&self) {
        self.shared.closed.store(true, Ordering::SeqCst);
        if let Some(link) = self.shared.binding.lock().unwrap().link.take() {
            link.close();
        }
    }
}

/// Builds the agent named by `gipsy.GEE.TA.implementation`.
pub fn create_agent(config: &EndpointConfig) -> Result<Arc<dyn TransportAgent>, TransportError> {
    let implementation = config.require(IMPLEMENTATION_KEY)?;
    match implementation {
        INPROC => Ok(Arc::new(crate::inproc::agent(config))),
        TCP_BROKER => Ok(Arc::new(crate::tcp::client::agent(config)?)),
        other => Err(TransportError::UnknownImplementation(other.to_owned())),
    }
}

#[derive(Default)]
struct RpcState {
    waiting: HashSet<[u8; 32]>,
    arrived: HashMap<[u8; 32], VecDeque<TransportEnvelope>>,
}

struct RpcShared {
    state: Mutex<RpcState>,
    ready: Condvar,
    stop: AtomicBool,
}

/// Request/response over a private reply queue, correlated by signature.
pub struct RpcClient {
    agent: Arc<dyn TransportAgent>,
    reply_queue: String,
    shared: Arc<RpcShared>,
    listener: Option<JoinHandle<()>>,
}

impl RpcClient {
    pub fn new(agent: Arc<dyn TransportAgent>) -> Result<Self, TransportError> {
        let reply_queue = format!("reply.{:032x}", rand::random::<u128>());
        agent.subscribe(&reply_queue, &reply_queue, QueueMode::Exclusive)?;
        let shared = Arc::new(RpcShared {
            state: Mutex::new(RpcState::default()),
            ready: Condvar::new(),
            stop: AtomicBool::new(false),
        });
        let listener = {
            let agent = agent.clone();
            let shared = shared.clone();
            let queue = reply_queue.clone();
            thread::Builder::new()
                .name("rpc-replies".into())
                .spawn(move || reply_loop(agent, queue, shared))
                .map_err(|e| TransportError::Io(e.to_string()))?
        };
        Ok(Self {
            agent,
            reply_queue,
            shared,
            listener: Some(listener),
        })
    }

    pub fn reply_queue(&self) -> &str {
        &self.reply_queue
    }

    pub fn agent(&self) -> &Arc<dyn TransportAgent> {
        &self.agent
    }

    pub fn call(
        &self,
        queue: &str,
        request: &TransportEnvelope,
        timeout: Duration,
    ) -> Result<TransportEnvelope, TransportError> {
        let sig = request.signature;
        self.shared.state.lock().unwrap().waiting.insert(sig);
        let result = self
            .agent
            .publish(queue, request, Some(&self.reply_queue))
            .and_then(|()| self.wait(sig, timeout));
        let mut st = self.shared.state.lock().unwrap();
        st.waiting.remove(&sig);
        st.arrived.remove(&sig);
        result
    }

    fn wait(&self, sig: [u8; 32], timeout: Duration) -> Result<TransportEnvelope, TransportError> {
        let deadline = Instant::now() + timeout;
        let mut st = self.shared.state.lock().unwrap();
        loop {
            if let Some(env) = st.arrived.get_mut(&sig).and_then(VecDeque::pop_front) {
                return Ok(env);
            }
            let Some(left) = deadline.checked_duration_since(Instant::now()) else {
                return Err(TransportError::Timeout(timeout));
            };
            st = self.shared.ready.wait_timeout(st, left).unwrap().0;
        }
    }
}

fn reply_loop(agent: Arc<dyn TransportAgent>, queue: String, shared: Arc<RpcShared>) {
    while !shared.stop.load(Ordering::SeqCst) {
        match agent.receive(&queue, &queue, Duration::from_millis(100)) {
            Ok(Some(d)) => {
                let _ = agent.ack(&queue, &d);
                let mut st = shared.state.lock().unwrap();
                if st.waiting.contains(&d.envelope.signature) {
                    st.arrived
                        .entry(d.envelope.signature)
                        .or_default()
                        .push_back(d.envelope);
                    shared.ready.notify_all();
                }
            }
            Ok(None) => {}
            Err(_) => thread::sleep(Duration::from_millis(20)),
        }
    }
}

impl Drop for RpcClient {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.listener.take() {
            let _ = h.join();
        }
        let _ = self
            .agent
            .unsubscribe(&self.reply_queue, &self.reply_queue);
    }
}
